"""Run configuration: flat key=value text with comments, strictly validated.

Every key has a default; files override defaults; command-line flags override
files. Unknown keys and out-of-range values are hard errors so a typo cannot
silently change an experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

__all__ = ["ConfigError", "RunConfig"]

_MODES = {
    "negatives_mode": ("in_batch", "as_written"),
    "attention_negatives": ("as_written", "in_batch"),
    "query_source": ("u", "mlp_fu", "mean_u_uprime"),
    "stats_mode": ("per_batch", "running"),
}


class ConfigError(Exception):
    """Invalid, unknown, or inconsistent configuration input."""


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str = "dataset"
    out: str = "runs/run"
    d: int = 64
    layers: int = 2
    heads: int = 4
    patch: int = 8
    image_size: int = 32
    lambda1: float = 0.5
    lambda2: float = 0.5
    tau: float = 0.07
    lr: float = 3e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    epochs: int = 30
    n_triplets: int = 640
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    negatives_mode: str = "in_batch"
    attention_negatives: str = "as_written"
    query_source: str = "u"
    stats_mode: str = "per_batch"
    share_image_encoders: bool = True
    use_late: bool = True
    use_attention: bool = True
    use_res: bool = True
    use_pi: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("d", "layers", "heads", "patch", "image_size",
                     "batch_size", "epochs", "n_triplets"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.image_size % self.patch != 0:
            raise ConfigError(
                f"image_size={self.image_size} must be divisible by patch={self.patch}"
            )
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for contrastive training")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r < 0 for r in ratios):
            raise ConfigError(f"split ratios must be nonnegative, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {ratios}")
        for name, allowed in _MODES.items():
            v = getattr(self, name)
            if v not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {v!r}")

    # -- text round trip -----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**cls.parse_overrides(text))

    @classmethod
    def parse_overrides(cls, text: str) -> dict:
        """Parse key=value lines into typed override values."""
        types = {f.name: f.type for f in fields(cls)}
        overrides: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            overrides[key] = _coerce(key, value, types[key], lineno)
        return overrides

    @classmethod
    def load(cls, path: Path | None, **cli_overrides) -> "RunConfig":
        overrides: dict = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {p}")
            overrides.update(cls.parse_overrides(p.read_text(encoding="utf-8")))
        overrides.update({k: v for k, v in cli_overrides.items() if v is not None})
        try:
            return cls(**overrides)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def _coerce(key: str, value: str, typ, lineno: int):
    name = typ if isinstance(typ, str) else typ.__name__
    try:
        if name == "bool":
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
        return value
    except ValueError as e:
        raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
