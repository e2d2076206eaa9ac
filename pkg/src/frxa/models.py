"""Builders for the two architectures.

The classifier is a VGG-style stack of 3x3 conv -> BN -> ReLU stages, each
closed by a 2x2 max pool, with a fully-connected head.  The visualizer is a
DenseNet-BC: an initial 16-channel conv, three dense blocks separated by
compressing transitions, then BN-ReLU -> global average pooling -> a
bias-free fully-connected head so the class score is exactly the weighted
sum of pooled feature maps.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T

DEFAULT_CONV_PLAN = ((64, 64), (128, 128), (256, 256, 256), (256, 256, 256))


class ConfigError(ValueError):
    """Architecture configuration violates its invariants."""


@dataclass(frozen=True)
class ClassifierConfig:
    conv_plan: tuple = DEFAULT_CONV_PLAN
    num_classes: int = 7
    input_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "conv_plan", tuple(tuple(s) for s in self.conv_plan))
        if not self.conv_plan or any(not stage for stage in self.conv_plan):
            raise ConfigError(f"conv_plan needs non-empty stages, got {self.conv_plan}")
        if any(w < 1 for stage in self.conv_plan for w in stage):
            raise ConfigError(f"conv widths must be positive, got {self.conv_plan}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        size = self.input_size
        for i, _ in enumerate(self.conv_plan):
            if size % 2:
                raise ConfigError(
                    f"stage {i} pools an odd spatial size {size} (input_size {self.input_size})"
                )
            size //= 2
        if size < 1:
            raise ConfigError(f"spatial size collapses below 1 after pooling: {size}")

    @property
    def final_spatial(self):
        return self.input_size // (2 ** len(self.conv_plan))

    @property
    def fc_input_dim(self):
        return self.conv_plan[-1][-1] * self.final_spatial**2


@dataclass(frozen=True)
class VisualizerConfig:
    initial_channels: int = 16
    blocks: int = 3
    layers_per_block: int = 16
    growth_rate: int = 12
    compression: float = 0.5
    num_classes: int = 7
    input_size: int = 64

    def __post_init__(self):
        if self.blocks < 1 or self.layers_per_block < 1 or self.growth_rate < 1:
            raise ConfigError("blocks, layers_per_block and growth_rate must be >= 1")
        if not 0.0 < self.compression <= 1.0:
            raise ConfigError(f"compression must be in (0, 1], got {self.compression}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.input_size % (2 ** (self.blocks - 1)):
            raise ConfigError(
                f"input_size {self.input_size} not divisible by 2^{self.blocks - 1}"
            )

    @property
    def final_spatial(self):
        return self.input_size // (2 ** (self.blocks - 1))

    def channel_plan(self):
        """Per-block (in, out) channel counts and the post-transition widths."""
        plan = []
        c = self.initial_channels
        for b in range(self.blocks):
            grown = c + self.layers_per_block * self.growth_rate
            plan.append((c, grown))
            c = grown
            if b < self.blocks - 1:
                c = int(self.compression * c)
        return plan

    @property
    def feature_channels(self):
        return self.channel_plan()[-1][1]


def _he_conv(rng, out_ch, in_ch, k, id):
    std = np.sqrt(2.0 / (in_ch * k * k))
    data = rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(np.float32)
    return T.Parameter(data, id)


def _he_fc(rng, d, c, id):
    std = np.sqrt(2.0 / d)
    data = rng.normal(0.0, std, size=(d, c, 1, 1)).astype(np.float32)
    return T.Parameter(data, id)


class _ConvUnit:
    """3x3 conv (stride 1, pad 1) -> BN -> ReLU."""

    def __init__(self, in_ch, out_ch, prefix, rng):
        self.weight = _he_conv(rng, out_ch, in_ch, 3, f"{prefix}.w")
        self.bn = L.BatchNormState(out_ch, prefix=f"{prefix}.bn")

    def __call__(self, x):
        return L.relu(L.batch_norm(T.conv2d(x, self.weight, 1, 1), self.bn))


class _DenseUnit:
    """DenseNet-BC layer: BN-ReLU-1x1 conv(4k) -> BN-ReLU-3x3 conv(k), concatenated."""

    def __init__(self, in_ch, growth, prefix, rng):
        bottleneck = 4 * growth
        self.bn1 = L.BatchNormState(in_ch, prefix=f"{prefix}.bn1")
        self.conv1 = _he_conv(rng, bottleneck, in_ch, 1, f"{prefix}.c1")
        self.bn2 = L.BatchNormState(bottleneck, prefix=f"{prefix}.bn2")
        self.conv2 = _he_conv(rng, growth, bottleneck, 3, f"{prefix}.c2")

    def __call__(self, x):
        h = T.conv2d(L.relu(L.batch_norm(x, self.bn1)), self.conv1)
        h = T.conv2d(L.relu(L.batch_norm(h, self.bn2)), self.conv2, 1, 1)
        return T.concat_channels([x, h])


class _TransitionUnit:
    """BN-ReLU-1x1 conv (compressed width) -> 2x2 average pool."""

    def __init__(self, in_ch, out_ch, prefix, rng):
        self.bn = L.BatchNormState(in_ch, prefix=f"{prefix}.bn")
        self.conv = _he_conv(rng, out_ch, in_ch, 1, f"{prefix}.c")

    def __call__(self, x):
        return L.avg_pool2(T.conv2d(L.relu(L.batch_norm(x, self.bn)), self.conv))


class Model:
    """A built network: ordered parameters, BN states and the forward graph."""

    def __init__(self, kind, config):
        self.kind = kind
        self.config = config
        self._params = []
        self._bn_states = []

    # -- registration -------------------------------------------------
    def _register(self, *items):
        for item in items:
            if isinstance(item, T.Parameter):
                self._params.append(item)
            elif isinstance(item, L.BatchNormState):
                self._params.extend([item.gamma, item.beta])
                self._bn_states.append(item)
            elif isinstance(item, _ConvUnit):
                self._register(item.weight, item.bn)
            elif isinstance(item, _DenseUnit):
                self._register(item.bn1, item.conv1, item.bn2, item.conv2)
            elif isinstance(item, _TransitionUnit):
                self._register(item.bn, item.conv)
            else:
                raise TypeError(f"cannot register {type(item).__name__}")

    def _check_unique_ids(self):
        ids = [p.id for p in self._params]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigError(f"duplicate parameter ids: {dupes}")

    # -- parameter access ---------------------------------------------
    def parameters(self):
        return list(self._params)

    def trainable_parameters(self):
        return [p for p in self._params if p.trainable]

    def zero_grad(self):
        for p in self._params:
            p.zero_grad()

    def state_entries(self):
        """Ordered (id, array) pairs of everything a checkpoint must carry."""
        entries = [(p.id, p.data) for p in self._params]
        for st in self._bn_states:
            entries.append((f"{st.prefix}.running_mean", st.running_mean))
            entries.append((f"{st.prefix}.running_var", st.running_var))
        return entries

    def load_state(self, arrays):
        """Copy a {id: array} mapping into the model, strict on ids and shapes."""
        entries = dict(self.state_entries())
        missing = sorted(set(entries) - set(arrays))
        extra = sorted(set(arrays) - set(entries))
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for key, target in entries.items():
            src = np.asarray(arrays[key])
            if src.shape != target.shape:
                raise ConfigError(f"{key}: shape {src.shape} != expected {target.shape}")
            target[...] = src

    def _set_mode(self, training):
        mode = "training" if training else "inference"
        for st in self._bn_states:
            st.mode = mode

    # -- forward -------------------------------------------------------
    def forward_logits(self, batch, training=False):
        raise NotImplementedError

    def predict_proba(self, batch):
        logits = self.forward_logits(batch, training=False)
        return L.softmax(logits.data.reshape(logits.shape[0], -1))

    def parameter_count(self):
        return sum(p.data.size for p in self._params)


class ClassifierModel(Model):
    def __init__(self, config, init_seed=0):
        super().__init__("classifier", config)
        rng = np.random.default_rng(init_seed)
        self.stages = []
        in_ch = 1
        for si, stage in enumerate(config.conv_plan):
            units = []
            for ci, out_ch in enumerate(stage):
                unit = _ConvUnit(in_ch, out_ch, f"s{si}.c{ci}", rng)
                units.append(unit)
                self._register(unit)
                in_ch = out_ch
            self.stages.append(units)
        self.fc_w = _he_fc(rng, config.fc_input_dim, config.num_classes, "fc.w")
        self.fc_b = T.Parameter(
            np.zeros((1, config.num_classes, 1, 1), dtype=np.float32), "fc.b"
        )
        self._register(self.fc_w, self.fc_b)
        self._check_unique_ids()

    def forward_logits(self, batch, training=False):
        self._set_mode(training)
        x = batch if isinstance(batch, T.ActivationTensor) else T.ActivationTensor(batch)
        for units in self.stages:
            for unit in units:
                x = unit(x)
            x = L.max_pool2(x)
        return L.fully_connected(x, self.fc_w, self.fc_b)


class VisualizerModel(Model):
    def __init__(self, config, init_seed=0):
        super().__init__("visualizer", config)
        rng = np.random.default_rng(init_seed)
        self.init_conv = _he_conv(rng, config.initial_channels, 1, 3, "init.w")
        self._register(self.init_conv)
        self.blocks = []
        self.transitions = []
        c = config.initial_channels
        for b in range(config.blocks):
            units = []
            for t in range(config.layers_per_block):
                unit = _DenseUnit(c, config.growth_rate, f"b{b}.l{t}", rng)
                units.append(unit)
                self._register(unit)
                c += config.growth_rate
            self.blocks.append(units)
            if b < config.blocks - 1:
                out_c = int(config.compression * c)
                tr = _TransitionUnit(c, out_c, f"t{b}", rng)
                self.transitions.append(tr)
                self._register(tr)
                c = out_c
        self.final_bn = L.BatchNormState(c, prefix="head.bn")
        self._register(self.final_bn)
        self.fc_w = _he_fc(rng, c, config.num_classes, "fc.w")  # bias-free head
        self._register(self.fc_w)
        self._check_unique_ids()

    def forward_features(self, batch, training=False):
        """Returns (feature_maps, pooled, logits) nodes for a batch."""
        self._set_mode(training)
        x = batch if isinstance(batch, T.ActivationTensor) else T.ActivationTensor(batch)
        x = T.conv2d(x, self.init_conv, 1, 1)
        for b, units in enumerate(self.blocks):
            for unit in units:
                x = unit(x)
            if b < len(self.transitions):
                x = self.transitions[b](x)
        feature_maps = L.relu(L.batch_norm(x, self.final_bn))
        pooled = L.global_avg_pool(feature_maps)
        logits = L.fully_connected(pooled, self.fc_w)
        return feature_maps, pooled, logits

    def forward_logits(self, batch, training=False):
        return self.forward_features(batch, training)[2]

    def fc_weight_matrix(self):
        """(K, C) output-layer weights used by the activation-map identity."""
        return self.fc_w.data.reshape(self.fc_w.shape[0], self.fc_w.shape[1])


def build_classifier(config, init_seed=0):
    if not isinstance(config, ClassifierConfig):
        raise ConfigError(f"expected ClassifierConfig, got {type(config).__name__}")
    return ClassifierModel(config, init_seed)


def build_visualizer(config, init_seed=0):
    if not isinstance(config, VisualizerConfig):
        raise ConfigError(f"expected VisualizerConfig, got {type(config).__name__}")
    return VisualizerModel(config, init_seed)


def bottleneck_features(model, batch):
    """Pooled (N, K) feature vectors of a visualizer, taken before the head."""
    if model.kind != "visualizer":
        raise ConfigError(f"bottleneck features need a visualizer, got {model.kind!r}")
    _, pooled, _ = model.forward_features(batch, training=False)
    n, k = pooled.shape[0], pooled.shape[1]
    return pooled.data.reshape(n, k).copy()
