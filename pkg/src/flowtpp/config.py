"""Run configuration: INI file values merged with command-line overrides.

Precedence, lowest to highest: built-in defaults, config file, flags.
Every output records the merged configuration.
"""
from __future__ import annotations

import configparser
import io
import json

from . import __version__
from .model import TempoNetConfig

DEFAULTS = {
    "model": {**TempoNetConfig().to_dict(), "embedding_dims": ""},
    "ingest": {"tolerance": 0.01, "train_fraction": 0.8, "schema": ""},
    "generate": {"mode": "stochastic", "rare_policy": "sentinel", "seed": 0, "max_events": 10 ** 8},
    "evaluate": {"k": 5, "max_points": 5000, "utc_offset_hours": 0.0, "top_n": 30, "n_quantiles": 99},
    "dkc": {"dns_servers": "", "mdns_groups": "224.0.0.251,ff02::fb"},
}


def _coerce(text: str, like):
    if isinstance(like, bool):
        v = text.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(float(text)) if "e" in text.lower() else int(text)
    if isinstance(like, float):
        return float(text)
    return text


class RunConfig:
    """Sectioned key-value settings with typed defaults."""

    def __init__(self, values=None):
        self.values = {s: dict(v) for s, v in DEFAULTS.items()}
        for section, items in (values or {}).items():
            self.update(section, items)

    @classmethod
    def from_file(cls, path):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
        cfg = cls()
        for section in cp.sections():
            cfg.update(section, dict(cp[section]), from_text=True)
        return cfg

    def update(self, section, items, from_text=False):
        if section not in self.values:
            raise ValueError(f"unknown config section [{section}]")
        known = self.values[section]
        for key, value in items.items():
            if value is None:
                continue
            if key not in known:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            if from_text and isinstance(value, str):
                value = _coerce(value, DEFAULTS[section][key])
            known[key] = value

    def __getitem__(self, section):
        return self.values[section]

    def model_config(self, **overrides) -> TempoNetConfig:
        d = {k: v for k, v in self.values["model"].items() if v is not None and k != "embedding_dims"}
        dims = self.values["model"].get("embedding_dims") or ""
        if dims:
            d["embedding_dims"] = {k.strip(): int(v) for k, v in
                                   (item.split(":") for item in dims.split(",") if item.strip())}
        d.update({k: v for k, v in overrides.items() if v is not None})
        return TempoNetConfig(**d)

    def as_dict(self) -> dict:
        return {"version": __version__, **{s: dict(v) for s, v in self.values.items()}}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s, items in self.values.items():
            cp[s] = {k: "" if v is None else str(v) for k, v in items.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def comment_lines(self) -> list:
        """The configuration as compact lines for CSV comment headers."""
        return [f"flowtpp {__version__}"] + [
            f"config [{s}] " + json.dumps(items, sort_keys=True, default=str)
            for s, items in self.values.items()]
