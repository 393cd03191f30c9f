"""Run configuration: one merged, line-oriented ``key = value`` file.

Grammar::

    # comment (also allowed after a value)
    section.key = value

Sections are ``model`` (with ``model.stft.*`` for the analysis settings),
``train``, ``loss`` and ``paths``. ``model.preset`` (``base``, ``ref1``,
``ref2`` or ``tiny``) picks the base architecture before the other
``model.*`` keys are applied. Lists are comma separated; booleans are
``true``/``false``. Unknown keys are rejected. :meth:`RunConfig.to_text`
writes every effective value, and parsing that text reproduces the same
configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .loss import LossConfig
from .model import ConfigError, ForkNetConfig
from .spectral import StftConfig
from .training import TrainConfig

PRESETS = {
    "base": ForkNetConfig.base,
    "ref1": ForkNetConfig.ref1,
    "ref2": ForkNetConfig.ref2,
    "tiny": ForkNetConfig.tiny,
}


@dataclass
class Paths:
    checkpoint_dir: str = "runs"
    log: str = "runs/train.log"


@dataclass
class RunConfig:
    model: ForkNetConfig = field(default_factory=ForkNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    paths: Paths = field(default_factory=Paths)

    def items(self) -> list[tuple[str, object]]:
        out = []
        for f in fields(self.model):
            if f.name == "stft":
                out += [(f"model.stft.{g.name}", getattr(self.model.stft, g.name)) for g in fields(StftConfig)]
            else:
                out.append((f"model.{f.name}", getattr(self.model, f.name)))
        for section in ("train", "loss", "paths"):
            obj = getattr(self, section)
            out += [(f"{section}.{f.name}", getattr(obj, f.name)) for f in fields(obj)]
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.items())


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def _coerce(key: str, raw: str, like):
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {raw!r}")
            return low == "true"
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, (list, tuple)):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            elem = like[0] if like else ""
            vals = [_coerce(key, p, elem) for p in parts]
            return type(like)(vals)
        return raw
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings in file order; later duplicates win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    return parse_lines("\n".join(pairs), "--set")


def build(entries: dict[str, str]) -> RunConfig:
    """Apply raw entries on top of the defaults and validate the result."""
    entries = dict(entries)
    preset = entries.pop("model.preset", "base")
    if preset not in PRESETS:
        raise ConfigError(f"model.preset: expected one of {sorted(PRESETS)}, got {preset!r}")
    base = RunConfig(model=PRESETS[preset]())
    known = dict(base.items())
    unknown = sorted(set(entries) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, raw, known[k]) for k, raw in entries.items()}

    def section(prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix) and "." not in k[len(prefix):]}

    try:
        stft = replace(base.model.stft, **section("model.stft."))
        model = replace(base.model, stft=stft, **section("model."))
        model.validate()
        train = replace(base.train, **section("train."))
        loss = replace(base.loss, **section("loss."))
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return RunConfig(model, train, loss, replace(base.paths, **section("paths.")))


def load(path=None, overrides: list[str] | None = None) -> RunConfig:
    entries: dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as f:
                entries = parse_lines(f.read(), str(path))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    entries.update(parse_overrides(overrides or []))
    return build(entries)


__all__ = ["ConfigError", "Paths", "RunConfig", "build", "load", "parse_lines", "parse_overrides",
           "format_value"]
