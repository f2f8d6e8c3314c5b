"""TrainConfig and its line-oriented ``key=value`` file format.

Nested records use dotted keys (``arch.base_channels=32``).  Blank lines and
lines starting with ``#`` are ignored.  Serialisation writes every field in
declaration order, so a round trip is byte-stable.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights
from .networks import ArchSpec, model_networks
from .optim import AdamConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    model: str = "proposed"
    data_root: str = "data"
    out_dir: str = "run"
    checkpoint_every: int = 0
    audit_every: int = 100
    eval_limit: int = 30
    loss_threshold: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        model_networks(self.model)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in _flatten(self))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "TrainConfig":
        values: dict[str, tuple[int, str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = (lineno, value)
        try:
            return _build(cls, "", values, source)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), str(path))


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            yield from _flatten(v, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", v


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(kind, text: str, where: str):
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{where}: expected true/false, got {text!r}")
    conv = {"int": int, "float": float, "str": str}.get(kind, kind)
    try:
        return conv(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {getattr(conv, '__name__', conv)}") from None


_NESTED = {"arch": ArchSpec, "weights": LossWeights, "optimizer": AdamConfig}


def _build(cls, prefix: str, values: dict, source: str, known: set | None = None):
    top = known is None
    known = set() if top else known
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if top and f.name in _NESTED:
            kwargs[f.name] = _build(_NESTED[f.name], key + ".", values, source, known)
            continue
        known.add(key)
        if key in values:
            lineno, text = values[key]
            kwargs[f.name] = _parse(f.type, text, f"{source}:{lineno}")
    if top:
        unknown = sorted(set(values) - known, key=lambda k: values[k][0])
        if unknown:
            lineno = values[unknown[0]][0]
            raise ConfigError(f"{source}:{lineno}: unknown key {unknown[0]!r}")
    return cls(**kwargs)
