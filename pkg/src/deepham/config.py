"""Flat key-value run configuration shared by every CLI command.

File format: one ``key = value`` per line, ``#`` starts a comment.  Values are
parsed to the type of the key's default.  Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

DEFAULTS: dict = {
    # data
    "n_traj": 100,
    "modes": 1,
    "amp": 0.1,
    "nx": 64,
    "nt": 100,
    "t_max": 2.0,
    "seed": 0,
    # model
    "p": 20,
    "hidden": 64,
    "layers": 3,
    "zero_final": False,
    "gram": "exact",
    # training
    "lr": 1e-4,
    "epochs": 2000,
    "batch_size": 64,
    "loss_mode": "dynamics",
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "checkpoint_every": 0,
    # evaluation
    "source": "learned",
    "method": "rk4",
    "dt_eval": 0.005,
    "t_eval": 2.0,
    "traj": 0,
}

CHOICES = {
    "gram": ("exact", "identity"),
    "loss_mode": ("dynamics", "density"),
    "source": ("learned", "exact"),
    "method": ("rk4", "leapfrog"),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        if isinstance(default, float):
            return float(raw)
        value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key}: {value!r} is not one of {CHOICES[key]}")
    return value


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = _coerce(k, v)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = parse_text(Path(path).read_text()) if path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def hash(self) -> str:
        raw = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:16]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
