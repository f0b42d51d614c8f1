"""Model/training configuration and its plain ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    # architecture
    channels: int = 64
    groups: int = 6
    blocks_per_group: int = 4
    scale: int = 2
    ssm_state: int = 16
    vssm_expand: int = 2
    # ablation switches
    use_dwt: bool = True
    use_lfssm: bool = True
    use_hfem: bool = True
    use_pdc: bool = True
    use_ssm2d: bool = True
    # objective
    lambda_rec: float = 0.1
    lambda_freq: float = 0.9
    # optimisation
    lr: float = 1e-3
    epochs: int = 100
    decay_every: int = 20
    batch_size: int = 4
    patch: int = 48
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.channels <= 0 or self.channels % 2:
            raise ConfigError(f"channels must be a positive even number, got {self.channels}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.groups < 1 or self.blocks_per_group < 1:
            raise ConfigError("groups and blocks_per_group must be >= 1")
        if self.ssm_state < 1 or self.vssm_expand < 1:
            raise ConfigError("ssm_state and vssm_expand must be >= 1")
        if self.lambda_rec < 0 or self.lambda_freq < 0 or self.lambda_rec + self.lambda_freq == 0:
            raise ConfigError("loss weights must be non-negative and not both zero")
        if self.patch % 2 or self.patch % self.scale:
            raise ConfigError(f"patch {self.patch} must be divisible by 2 and by scale {self.scale}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("decay_every and batch_size must be >= 1, epochs >= 0")

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], val, key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(typ, val: str, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = val.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(val)
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {typ}") from None
