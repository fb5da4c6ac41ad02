"""
Single-branch base classifier and the dual-branch fusion classifier.

Base model (L conv layers, two FC layers, sigmoid head):
    [conv3x3x3 -> BN -> ReLU (-> 2x2x2 pool)] x L -> flatten -> FC -> ReLU -> FC -> sigmoid

Fusion model for a point (alpha, beta) of the search space:
    branch1 = layers 1..alpha applied to the mask S
    branch2 = layers 1..alpha applied to the image X   (separate weights)
    trunk   = layers alpha+1..L and the FC head applied to beta(branch1, branch2)

beta is elementwise add, elementwise multiply, or channel concatenation. For
concatenation the first trunk conv (or the first FC layer when alpha == L)
consumes twice the channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigError, ShapeError, ValidationError
from tensor import (
    BatchNormState,
    Parameter,
    Tensor,
    add,
    avgpool3d,
    batchnorm3d,
    concat_channels,
    conv3d,
    flatten,
    fully_connected,
    maxpool3d,
    mul,
    no_grad,
    relu,
    sigmoid,
)

MASK_TOLERANCE = 1e-6


class Beta(str, Enum):
    """How the two branch feature maps are combined."""

    ADD = "add"
    MUL = "mul"
    CONCAT = "concat"

    @property
    def symbol(self) -> str:
        return {"add": "+", "mul": "*", "concat": "⊕"}[self.value]

    @classmethod
    def parse(cls, value: Union[str, "Beta"]) -> "Beta":
        if isinstance(value, Beta):
            return value
        text = str(value).strip().lower()
        for beta in cls:
            if text in (beta.value, beta.symbol):
                return beta
        aliases = {"plus": cls.ADD, "sum": cls.ADD, "multiply": cls.MUL, "cat": cls.CONCAT}
        if text in aliases:
            return aliases[text]
        raise ConfigError(f"unknown fusion operation {value!r} (expected add, mul or concat)")


class BaseInput(str, Enum):
    """What a single-branch base model reads."""

    MASK = "mask"
    IMAGE = "image"
    EARLY = "early"  # mask and image stacked as two input channels

    @property
    def display_name(self) -> str:
        return self.value.title()


@dataclass(frozen=True)
class BaseConfig:
    num_layers: int = 6
    channels: Tuple[int, ...] = (16, 32, 64, 128, 128, 128)
    input_side: int = 32
    # 1-based layer indices followed by a 2x2x2 pool
    pool_after: Tuple[int, ...] = (1, 2, 3, 4, 5)
    fc_hidden: int = 256
    pool: str = "max"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "pool_after", tuple(sorted(int(i) for i in self.pool_after)))

    def validate(self) -> "BaseConfig":
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if len(self.channels) != self.num_layers:
            raise ConfigError(
                f"channels has {len(self.channels)} entries but num_layers is {self.num_layers}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if len(set(self.pool_after)) != len(self.pool_after):
            raise ConfigError(f"pool_after has duplicates: {self.pool_after}")
        if any(not 1 <= i <= self.num_layers for i in self.pool_after):
            raise ConfigError(f"pool_after entries must lie in [1, {self.num_layers}], got {self.pool_after}")
        if self.input_side < 2 or self.input_side % 2:
            raise ConfigError(f"input_side must be a positive even integer, got {self.input_side}")
        factor = 2 ** len(self.pool_after)
        if self.input_side % factor:
            raise ConfigError(
                f"input_side {self.input_side} is not divisible by 2^{len(self.pool_after)} = {factor}"
            )
        if self.fc_hidden < 1:
            raise ConfigError(f"fc_hidden must be positive, got {self.fc_hidden}")
        if self.pool not in ("max", "avg"):
            raise ConfigError(f"pool must be 'max' or 'avg', got {self.pool!r}")
        return self

    def side_after(self, layer: int) -> int:
        """Spatial side of the feature map leaving layer `layer` (0 = network input)."""
        pools = sum(1 for i in self.pool_after if i <= layer)
        return self.input_side // (2 ** pools)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["channels"] = list(self.channels)
        data["pool_after"] = list(self.pool_after)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BaseConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown base config keys: {sorted(unknown)}")
        values = dict(data)
        if "num_layers" in values and "channels" not in values:
            raise ConfigError("channels must be given together with num_layers")
        if "channels" in values and "num_layers" not in values:
            values["num_layers"] = len(values["channels"])
        if "num_layers" in values and "pool_after" not in values:
            values["pool_after"] = tuple(range(1, int(values["num_layers"])))
        return cls(**values).validate()


@dataclass(frozen=True)
class FusionSpec:
    alpha: int
    beta: Beta
    base: BaseConfig = field(default_factory=BaseConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", Beta.parse(self.beta))

    def validate(self) -> "FusionSpec":
        self.base.validate()
        if not 1 <= self.alpha <= self.base.num_layers:
            raise ConfigError(f"alpha must lie in [1, {self.base.num_layers}], got {self.alpha}")
        return self

    @property
    def name(self) -> str:
        return f"FusionNet{self.alpha}{self.beta.symbol}"

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha": self.alpha, "beta": self.beta.value, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FusionSpec":
        base = BaseConfig.from_dict(data.get("base", {}))
        return cls(alpha=int(data["alpha"]), beta=Beta.parse(data["beta"]), base=base).validate()


def enumerate_space(base: BaseConfig) -> List[FusionSpec]:
    """All 3 * L fusion specs, alpha ascending, then beta in declaration order."""
    base.validate()
    return [
        FusionSpec(alpha=alpha, beta=beta, base=base)
        for alpha in range(1, base.num_layers + 1)
        for beta in Beta
    ]


class ConvBlock:
    """conv3d -> batchnorm3d -> relu, followed by an optional 2x2x2 pool."""

    def __init__(self, prefix: str, index: int, cin: int, cout: int, pooled: bool, pool: str, rng: np.random.Generator):
        self.name = f"{prefix}.conv{index}"
        self.pooled = pooled
        self.pool = pool
        std = np.sqrt(2.0 / (cin * 27))
        self.weight = Parameter.create(f"{prefix}.conv{index}.weight", rng.normal(0.0, std, size=(cout, cin, 3, 3, 3)))
        self.bias = Parameter.create(f"{prefix}.conv{index}.bias", np.zeros(cout))
        self.gamma = Parameter.create(f"{prefix}.bn{index}.gamma", np.ones(cout))
        self.beta_shift = Parameter.create(f"{prefix}.bn{index}.beta", np.zeros(cout))
        self.bn_state = BatchNormState.create(cout)
        self.bn_name = f"{prefix}.bn{index}"

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias, self.gamma, self.beta_shift]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.bn_name}.running_mean": self.bn_state.running_mean,
            f"{self.bn_name}.running_var": self.bn_state.running_var,
        }

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = conv3d(x, self.weight.tensor, self.bias.tensor)
        out = batchnorm3d(out, self.gamma.tensor, self.beta_shift.tensor, self.bn_state, training)
        out = relu(out)
        if self.pooled:
            out = maxpool3d(out) if self.pool == "max" else avgpool3d(out)
        return out


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.name = name
        std = np.sqrt(2.0 / n_in)
        self.weight = Parameter.create(f"{name}.weight", rng.normal(0.0, std, size=(n_out, n_in)))
        self.bias = Parameter.create(f"{name}.bias", np.zeros(n_out))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight.tensor, self.bias.tensor)


def _stack(prefix: str, base: BaseConfig, first: int, last: int, cin: int, rng: np.random.Generator) -> List[ConvBlock]:
    blocks = []
    for layer in range(first, last + 1):
        cout = base.channels[layer - 1]
        blocks.append(ConvBlock(prefix, layer, cin, cout, layer in base.pool_after, base.pool, rng))
        cin = cout
    return blocks


class Model:
    """
    A built classifier: either a single-branch base model (`source` set) or a
    fusion model (`spec` set). Parameter shapes are fully determined by the config.
    """

    def __init__(
        self,
        base: BaseConfig,
        spec: Optional[FusionSpec] = None,
        source: Optional[BaseInput] = None,
        seed: int = 0,
    ):
        if (spec is None) == (source is None):
            raise ConfigError("a model is either a fusion spec or a single-branch base model")
        self.base = base.validate()
        self.spec = spec.validate() if spec is not None else None
        self.source = source
        self.seed = int(seed)
        self.mode = "train"
        self._shapes: List[Tuple[str, Tuple[int, ...]]] = []

        rng = np.random.default_rng(self.seed)
        L = base.num_layers
        if spec is None:
            in_channels = 2 if source is BaseInput.EARLY else 1
            self.branch1: List[ConvBlock] = []
            self.branch2: List[ConvBlock] = []
            self.trunk = _stack("trunk", base, 1, L, in_channels, rng)
            flat_channels = base.channels[-1]
        else:
            alpha = spec.alpha
            self.branch1 = _stack("branch1", base, 1, alpha, 1, rng)
            self.branch2 = _stack("branch2", base, 1, alpha, 1, rng)
            fused = base.channels[alpha - 1] * (2 if spec.beta is Beta.CONCAT else 1)
            self.trunk = _stack("trunk", base, alpha + 1, L, fused, rng)
            flat_channels = base.channels[-1] if alpha < L else fused
        flat = flat_channels * base.side_after(L) ** 3
        self.fc1 = Dense("fc1", flat, base.fc_hidden, rng)
        self.fc2 = Dense("fc2", base.fc_hidden, 1, rng)

        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model")

    # ---- bookkeeping ----
    @property
    def name(self) -> str:
        return self.spec.name if self.spec is not None else self.source.display_name

    @property
    def in_channels(self) -> int:
        return 2 if self.source is BaseInput.EARLY else 1

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def _blocks(self) -> List[ConvBlock]:
        return [*self.branch1, *self.branch2, *self.trunk]

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for block in self._blocks():
            params.extend(block.parameters())
        params.extend(self.fc1.parameters())
        params.extend(self.fc2.parameters())
        return params

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for block in self._blocks():
            out.update(block.buffers())
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.grad = None

    # ---- forward ----
    def _record(self, name: str, t: Tensor) -> Tensor:
        self._shapes.append((name, t.shape))
        return t

    def _run(self, blocks: Sequence[ConvBlock], x: Tensor) -> Tensor:
        for block in blocks:
            x = self._record(block.name, block(x, self.training))
        return x

    def _check_inputs(self, mask: Tensor, image: Tensor) -> None:
        side = self.base.input_side
        if mask.shape != image.shape:
            raise ShapeError(f"mask {mask.shape} and image {image.shape} differ")
        if mask.ndim != 5 or mask.shape[1] != 1 or mask.shape[2:] != (side, side, side):
            raise ShapeError(f"expected inputs of shape [B, 1, {side}, {side}, {side}], got {mask.shape}")
        values = mask.data
        off = np.minimum(np.abs(values), np.abs(values - 1)) > MASK_TOLERANCE
        if off.any():
            raise ValidationError(f"mask has {int(off.sum())} non-binary voxels")

    def forward(self, mask: Tensor, image: Tensor) -> Tensor:
        self._check_inputs(mask, image)
        self._shapes = []
        if self.training:
            return self._forward(mask, image)
        with no_grad():
            return self._forward(mask, image)

    def _forward(self, mask: Tensor, image: Tensor) -> Tensor:
        if self.spec is None:
            if self.source is BaseInput.MASK:
                x = mask
            elif self.source is BaseInput.IMAGE:
                x = image
            else:
                x = concat_channels(mask, image)
            x = self._run(self.trunk, x)
        else:
            s = self._run(self.branch1, mask)
            t = self._run(self.branch2, image)
            beta = self.spec.beta
            if beta is Beta.ADD:
                x = add(s, t)
            elif beta is Beta.MUL:
                x = mul(s, t)
            else:
                x = concat_channels(s, t)
            x = self._record("fusion", x)
            x = self._run(self.trunk, x)
        x = self._record("flatten", flatten(x))
        x = self._record("fc1", relu(self.fc1(x)))
        x = self._record("fc2", self.fc2(x))
        return sigmoid(x)

    __call__ = forward

    # ---- shape walk ----
    def layer_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Shapes recorded during the most recent forward pass."""
        return list(self._shapes)

    def expected_layer_shapes(self, batch: int) -> List[Tuple[str, Tuple[int, ...]]]:
        """Shapes every recorded layer must have, derived from the config alone."""
        base = self.base
        L = base.num_layers

        def block_shapes(prefix: str, first: int, last: int):
            return [
                (f"{prefix}.conv{i}", (batch, base.channels[i - 1], *(base.side_after(i),) * 3))
                for i in range(first, last + 1)
            ]

        if self.spec is None:
            shapes = block_shapes("trunk", 1, L)
            final = (base.channels[-1], base.side_after(L))
        else:
            alpha = self.spec.alpha
            fused_c = base.channels[alpha - 1] * (2 if self.spec.beta is Beta.CONCAT else 1)
            side = base.side_after(alpha)
            shapes = block_shapes("branch1", 1, alpha) + block_shapes("branch2", 1, alpha)
            shapes.append(("fusion", (batch, fused_c, side, side, side)))
            shapes += block_shapes("trunk", alpha + 1, L)
            final = (base.channels[-1] if alpha < L else fused_c, base.side_after(L))
        shapes.append(("flatten", (batch, final[0] * final[1] ** 3)))
        shapes.append(("fc1", (batch, base.fc_hidden)))
        shapes.append(("fc2", (batch, 1)))
        return shapes

    def check_shapes(self) -> None:
        """Raise ShapeError unless the last forward matched the config-derived shapes."""
        if not self._shapes:
            raise ShapeError("no forward pass recorded")
        batch = self._shapes[0][1][0]
        expected = self.expected_layer_shapes(batch)
        if self._shapes != expected:
            raise ShapeError(f"recorded layer shapes {self._shapes} differ from expected {expected}")


def build_base(config: BaseConfig, in_channels: int, source: Optional[BaseInput] = None, seed: int = 0) -> Model:
    """Single-branch classifier. in_channels 1 reads the image (or the mask), 2 reads both stacked."""
    if in_channels not in (1, 2):
        raise ConfigError(f"in_channels must be 1 or 2, got {in_channels}")
    if source is None:
        source = BaseInput.EARLY if in_channels == 2 else BaseInput.IMAGE
    if (source is BaseInput.EARLY) != (in_channels == 2):
        raise ConfigError(f"source {source.value} does not read {in_channels} channel(s)")
    return Model(config, source=source, seed=seed)


def build_fused(spec: FusionSpec, seed: int = 0) -> Model:
    return Model(spec.base, spec=spec, seed=seed)


def forward(model: Model, mask: Tensor, image: Tensor) -> Tensor:
    return model.forward(mask, image)


def predict(model: Model, masks: np.ndarray, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode probabilities for stacked [N, 1, s, s, s] arrays."""
    previous = model.mode
    model.eval()
    try:
        outputs = []
        for start in range(0, len(masks), batch_size):
            stop = start + batch_size
            p = model.forward(Tensor(masks[start:stop]), Tensor(images[start:stop]))
            outputs.append(p.data[:, 0].astype(np.float64))
        return np.concatenate(outputs) if outputs else np.zeros(0)
    finally:
        model.mode = previous
