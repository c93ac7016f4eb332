"""Run configuration and its flat ``dotted.key = value`` text format.

Example file::

    # tiny model for gradient checks
    backbone.blocks = 1
    backbone.channels = 4
    backbone.input_size = 8
    selfcorr.percentiles = 4
    prototype.update_rounds = 2

Unknown keys are rejected.  ``ablation`` decides the prototype flags; the
values written for ``prototype.enabled`` / ``prototype.updates_enabled``
are overridden by it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ABLATIONS = ("baseline", "prototype", "prototype-update", "spatial", "channel", "full")

# (prototypes enabled, updates enabled)
_ABLATION_FLAGS = {
    "baseline": (False, False),
    "prototype": (True, False),
    "prototype-update": (True, True),
    "spatial": (True, True),
    "channel": (True, True),
    "full": (True, True),
}

ABLATION_MAPPING = {
    "baseline": "no prototypes; refined = coarse",
    "prototype": "prototypes, 0 update rounds; refined = coarse + fused prototypes",
    "prototype-update": "prototypes with update rounds; refined = coarse + fused prototypes",
    "spatial": "LCCD whole-vector plane only; refined = coarse + doubtful",
    "channel": "LCCD whole-vector + per-channel planes; refined = coarse + doubtful",
    "full": "LCCD all planes; refined = adaptive_fuse(coarse, doubtful)",
}


@dataclass
class BackboneConfig:
    blocks: int = 3
    channels: tuple = (16, 32, 64)
    input_size: int = 64

    @property
    def feature_size(self) -> int:
        return self.input_size // 2 ** self.blocks

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError("backbone.blocks must be >= 1")
        if len(self.channels) != self.blocks:
            raise ConfigError(f"backbone.channels needs {self.blocks} entries, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise ConfigError("backbone.channels must be positive")
        if self.input_size < 1 or self.input_size % 2 ** self.blocks:
            raise ConfigError(f"backbone.input_size {self.input_size} not divisible by 2^{self.blocks}")


@dataclass
class PrototypePairConfig:
    update_rounds: int = 4
    enabled: bool = True
    updates_enabled: bool = True

    @property
    def rounds(self) -> int:
        return self.update_rounds if (self.enabled and self.updates_enabled) else 0

    def validate(self) -> None:
        if self.update_rounds < 0:
            raise ConfigError("prototype.update_rounds must be >= 0")
        if self.updates_enabled and not self.enabled:
            raise ConfigError("prototype.updates_enabled requires prototype.enabled")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    steps: int = 1000
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.kind must be sgd or adam, got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError("optimizer.learning_rate must be > 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("optimizer.steps must be >= 0 and optimizer.batch_size >= 1")


@dataclass
class TrainConfig:
    val_fraction: float = 0.125
    val_every: int = 100

    def validate(self) -> None:
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("train.val_fraction must be in [0, 1)")
        if self.val_every < 1:
            raise ConfigError("train.val_every must be >= 1")


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decoder_channels: tuple | None = None
    percentiles: int = 16
    prototype: PrototypePairConfig = field(default_factory=PrototypePairConfig)
    ablation: str = "full"
    loss_weights: tuple = (0.5, 1.0, 1.0)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.ablation in _ABLATION_FLAGS:
            self.prototype.enabled, self.prototype.updates_enabled = _ABLATION_FLAGS[self.ablation]

    @property
    def decoder(self) -> tuple:
        """Output channels of each upsampling block, coarse to fine."""
        if self.decoder_channels is not None:
            return tuple(self.decoder_channels)
        ch = tuple(self.backbone.channels)
        return ch[::-1][1:] + (ch[0],)

    @property
    def lccd_planes(self) -> str:
        return "spatial" if self.ablation == "spatial" else "channel"

    @property
    def refine(self) -> str:
        if self.ablation == "baseline":
            return "none"
        if self.ablation in ("prototype", "prototype-update"):
            return "prototype"
        return "adaptive" if self.ablation == "full" else "add"

    def validate(self) -> "RunConfig":
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {', '.join(ABLATIONS)}; got {self.ablation!r}")
        self.backbone.validate()
        self.prototype.validate()
        self.optimizer.validate()
        self.train.validate()
        if len(self.decoder) != self.backbone.blocks or any(c < 1 for c in self.decoder):
            raise ConfigError(f"decoder.channels needs {self.backbone.blocks} positive entries")
        cells = self.backbone.feature_size ** 2
        if not 1 <= self.percentiles <= cells - 1:
            raise ConfigError(f"selfcorr.percentiles must be in 1..{cells - 1} for {cells} feature cells")
        if len(self.loss_weights) != 3 or any(w <= 0 for w in self.loss_weights):
            raise ConfigError("loss.weights needs three positive values")
        return self

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"optimizer.steps": 5})``."""
        text = dumps(self)
        values = loads_dict(text)
        for k in ("prototype.enabled", "prototype.updates_enabled"):
            values.pop(k)
        values.update({k: _format(v) for k, v in changes.items()})
        return from_dict(values)


# ---------------------------------------------------------------------------
# text format

_TUPLE_INT = "tuple[int]"
_TUPLE_FLOAT = "tuple[float]"

_KEYS = {
    "seed": ("seed", int),
    "ablation": ("ablation", str),
    "backbone.blocks": ("backbone.blocks", int),
    "backbone.channels": ("backbone.channels", _TUPLE_INT),
    "backbone.input_size": ("backbone.input_size", int),
    "decoder.channels": ("decoder_channels", _TUPLE_INT),
    "selfcorr.percentiles": ("percentiles", int),
    "prototype.enabled": ("prototype.enabled", bool),
    "prototype.updates_enabled": ("prototype.updates_enabled", bool),
    "prototype.update_rounds": ("prototype.update_rounds", int),
    "loss.weights": ("loss_weights", _TUPLE_FLOAT),
    "optimizer.kind": ("optimizer.kind", str),
    "optimizer.learning_rate": ("optimizer.learning_rate", float),
    "optimizer.steps": ("optimizer.steps", int),
    "optimizer.batch_size": ("optimizer.batch_size", int),
    "optimizer.beta1": ("optimizer.beta1", float),
    "optimizer.beta2": ("optimizer.beta2", float),
    "optimizer.eps": ("optimizer.eps", float),
    "train.val_fraction": ("train.val_fraction", float),
    "train.val_every": ("train.val_every", int),
}


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if kind == _TUPLE_INT:
            return None if raw.lower() == "auto" else tuple(int(p) for p in raw.split(","))
        if kind == _TUPLE_FLOAT:
            return tuple(float(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads_dict(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return values


def from_dict(values: dict) -> RunConfig:
    for key in values:
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
    parsed = {k: _parse_value(k, raw, _KEYS[k][1]) for k, raw in values.items()}
    groups = {"backbone": {}, "prototype": {}, "optimizer": {}, "train": {}}
    top = {}
    for key, value in parsed.items():
        attr = _KEYS[key][0]
        if "." in attr:
            group, name = attr.split(".")
            groups[group][name] = value
        else:
            top[attr] = value
    # the ablation mode decides these flags; an explicit value must agree with it
    mode = top.get("ablation", "full")
    implied = dict(zip(("enabled", "updates_enabled"), _ABLATION_FLAGS.get(mode, (None, None))))
    for name, want in implied.items():
        if name in groups["prototype"]:
            given = groups["prototype"].pop(name)
            if want is not None and given != want:
                raise ConfigError(f"prototype.{name} = {_format(given)} contradicts ablation = {mode}")
    cfg = RunConfig(
        backbone=BackboneConfig(**groups["backbone"]),
        prototype=PrototypePairConfig(**groups["prototype"]),
        optimizer=OptimizerConfig(**groups["optimizer"]),
        train=TrainConfig(**groups["train"]),
        **top,
    )
    return cfg.validate()


def loads(text: str) -> RunConfig:
    return from_dict(loads_dict(text))


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return loads(text)


def _lookup(cfg: RunConfig, attr: str):
    obj = cfg
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


def dumps(cfg: RunConfig) -> str:
    """Canonical text form; ``loads(dumps(c)) == c``."""
    lines = [f"{key} = {_format(_lookup(cfg, attr))}" for key, (attr, _) in _KEYS.items()]
    return "\n".join(lines) + "\n"


def tiny() -> RunConfig:
    """The small configuration used for gradient checks (8x8 input, C=4)."""
    return RunConfig(
        backbone=BackboneConfig(blocks=1, channels=(4,), input_size=8),
        decoder_channels=(4,),
        percentiles=4,
        prototype=PrototypePairConfig(update_rounds=2),
        seed=0,
    ).validate()


def asdict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
