"""Residual CNN assembly: architecture description, blocks, and the network.

The network consumes single-channel silhouette images:

  stem conv (7x7, stride 1) -> ReLU -> 2x2 max pool
  -> groups of residual blocks (two 3x3 convs each, batch norm at entry;
     the first block of a downsampling group max-pools its main path and
     uses a 1x1 stride-2 projection shortcut)
  -> batch norm -> 4x4 average pool -> flatten
  -> fully connected layers (ReLU + dropout) -> linear class scores.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    AvgPool,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2x2,
    ReLU,
    softmax,
)

ARCH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Complete structural description of the classifier."""

    input_size: int = 256
    stem_filters: int = 32
    stem_kernel: int = 7
    group_filters: tuple = (32, 64, 128, 256, 512)
    blocks_per_group: int = 3
    downsample_groups: tuple = (1, 2, 3, 4)  # group indices whose first block halves H/W
    block_kernel: int = 3
    avg_pool: int = 4
    fc: tuple = (512, 512)
    dropout: float = 0.25
    classes: int = 43

    def __post_init__(self):
        object.__setattr__(self, "group_filters", tuple(int(f) for f in self.group_filters))
        object.__setattr__(self, "downsample_groups", tuple(int(g) for g in self.downsample_groups))
        object.__setattr__(self, "fc", tuple(int(f) for f in self.fc))
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.group_filters:
            raise ValueError("need at least one block group")
        if self.blocks_per_group < 1:
            raise ValueError("need at least one block per group")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        bad = [g for g in self.downsample_groups if not 0 <= g < len(self.group_filters)]
        if bad:
            raise ValueError(f"downsample group index out of range: {bad}")
        spatial_trace(self)  # raises on inconsistent spatial arithmetic

    def to_json(self) -> str:
        d = asdict(self)
        d["format"] = ARCH_FORMAT_VERSION
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        d = json.loads(text)
        if d.pop("format", ARCH_FORMAT_VERSION) != ARCH_FORMAT_VERSION:
            raise ValueError("unsupported architecture format version")
        d["group_filters"] = tuple(d["group_filters"])
        d["downsample_groups"] = tuple(d["downsample_groups"])
        d["fc"] = tuple(d["fc"])
        return cls(**d)


def spatial_trace(spec: ArchSpec):
    """Feature-map sizes through the network: input, post-stem-pool, one entry
    per group, and the post-average-pool size.  Raises when any stage cannot
    halve or pool evenly."""
    size = spec.input_size
    trace = [size]
    if size % 2:
        raise ValueError("input size must be even for the stem pool")
    size //= 2
    trace.append(size)
    for gi in range(len(spec.group_filters)):
        if gi in spec.downsample_groups:
            if size % 2:
                raise ValueError(f"group {gi} cannot halve odd size {size}")
            size //= 2
        trace.append(size)
    if size % spec.avg_pool or size < spec.avg_pool:
        raise ValueError(
            f"pre-pool size {size} is not divisible by the {spec.avg_pool}x"
            f"{spec.avg_pool} average pool"
        )
    trace.append(size // spec.avg_pool)
    return trace


def hidden_layer_count(spec: ArchSpec) -> int:
    """Counting rule: block convolutions + the average pool + the fully
    connected hidden layers (stem, projections, and the output layer are
    excluded)."""
    return len(spec.group_filters) * spec.blocks_per_group * 2 + 1 + len(spec.fc)


def block_conv_filter_total(spec: ArchSpec) -> int:
    """Total filter count across all residual-block convolutions."""
    return sum(2 * spec.blocks_per_group * f for f in spec.group_filters)


def flatten_width(spec: ArchSpec) -> int:
    side = spatial_trace(spec)[-1]
    return spec.group_filters[-1] * side * side


class ResidualBlock(Layer):
    """Batch norm at entry, two convolutions on the main path, additive
    shortcut.

    Downsampling blocks max-pool the main path and use a 1x1 stride-2
    projection; blocks that only change channel count use a 1x1 stride-1
    projection; otherwise the shortcut is the identity on the block input.
    Projections consume the normalized activation, so a block whose main
    path produces zeros reduces to projection(batchnorm(x)).
    """

    def __init__(self, in_channels, out_channels, kernel, downsample, *, rng, dtype):
        self.downsample = downsample
        self.bn = BatchNorm2D(in_channels, dtype=dtype)
        self.pool = MaxPool2x2() if downsample else None
        self.conv_a = Conv2D(in_channels, out_channels, kernel, rng=rng, dtype=dtype)
        self.relu_a = ReLU()
        self.conv_b = Conv2D(out_channels, out_channels, kernel, rng=rng, dtype=dtype)
        self.relu_b = ReLU()
        if downsample:
            self.proj = Conv2D(in_channels, out_channels, 1, stride=2, rng=rng, dtype=dtype)
        elif in_channels != out_channels:
            self.proj = Conv2D(in_channels, out_channels, 1, stride=1, rng=rng, dtype=dtype)
        else:
            self.proj = None

    def sublayers(self):
        named = [("bn", self.bn), ("conv_a", self.conv_a), ("conv_b", self.conv_b)]
        if self.proj is not None:
            named.append(("proj", self.proj))
        return named

    def forward(self, x, train: bool, rng=None):
        y = self.bn.forward(x, train, rng)
        h = self.pool.forward(y, train, rng) if self.downsample else y
        h = self.relu_a.forward(self.conv_a.forward(h, train, rng), train, rng)
        h = self.relu_b.forward(self.conv_b.forward(h, train, rng), train, rng)
        s = self.proj.forward(y, train, rng) if self.proj is not None else x
        return h + s

    def backward(self, grad):
        gm = self.conv_b.backward(self.relu_b.backward(grad))
        gm = self.conv_a.backward(self.relu_a.backward(gm))
        if self.downsample:
            gm = self.pool.backward(gm)
        if self.proj is not None:
            gy = gm + self.proj.backward(grad)
            return self.bn.backward(gy)
        return self.bn.backward(gm) + grad


class Network:
    """The assembled classifier: an ordered chain of layers/blocks."""

    def __init__(self, spec: ArchSpec, chain):
        self.spec = spec
        self._chain = chain  # list of (name, layer)

    def _walk(self):
        for name, layer in self._chain:
            if isinstance(layer, ResidualBlock):
                for subname, sub in layer.sublayers():
                    yield f"{name}.{subname}", sub
            else:
                yield name, layer

    def named_params(self) -> dict:
        return {
            f"{name}.{key}": arr
            for name, layer in self._walk()
            for key, arr in layer.params().items()
        }

    def named_grads(self) -> dict:
        return {
            f"{name}.{key}": arr
            for name, layer in self._walk()
            for key, arr in layer.grads().items()
        }

    def named_state(self) -> dict:
        return {
            f"{name}.{key}": arr
            for name, layer in self._walk()
            for key, arr in layer.state().items()
        }

    def forward(self, x, train: bool = False, rng=None) -> np.ndarray:
        """Class scores (logits) for a batch [B, 1, S, S]."""
        s = self.spec.input_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected input [B, 1, {s}, {s}], got {x.shape}")
        for _, layer in self._chain:
            x = layer.forward(x, train, rng)
        return x

    def forward_probs(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode per-class probabilities (rows sum to 1)."""
        return softmax(self.forward(x, train=False))

    def backward(self, grad):
        for _, layer in reversed(self._chain):
            grad = layer.backward(grad)
        return grad


def build(spec: ArchSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Construct a network with He-uniform weights drawn from a seeded
    generator; biases and batch-norm offsets start at zero, scales at one."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    chain = []
    chain.append(("stem.conv", Conv2D(1, spec.stem_filters, spec.stem_kernel, rng=rng, dtype=dtype)))
    chain.append(("stem.relu", ReLU()))
    chain.append(("stem.pool", MaxPool2x2()))
    in_ch = spec.stem_filters
    for gi, filters in enumerate(spec.group_filters):
        for bi in range(spec.blocks_per_group):
            down = bi == 0 and gi in spec.downsample_groups
            chain.append(
                (
                    f"g{gi}.b{bi}",
                    ResidualBlock(in_ch, filters, spec.block_kernel, down, rng=rng, dtype=dtype),
                )
            )
            in_ch = filters
    chain.append(("head.bn", BatchNorm2D(in_ch, dtype=dtype)))
    chain.append(("head.pool", AvgPool(spec.avg_pool)))
    chain.append(("head.flatten", Flatten()))
    width = flatten_width(spec)
    for fi, out_f in enumerate(spec.fc):
        chain.append((f"head.fc{fi}", Dense(width, out_f, rng=rng, dtype=dtype)))
        chain.append((f"head.fc{fi}.relu", ReLU()))
        chain.append((f"head.fc{fi}.drop", Dropout(spec.dropout)))
        width = out_f
    chain.append(("head.out", Dense(width, spec.classes, rng=rng, dtype=dtype)))
    return Network(spec, chain)
