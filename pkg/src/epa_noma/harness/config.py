"""
Scenario configuration files.

Flat ``key = value`` text with ``#`` comments.  Every key names a field of
:class:`ScenarioConfig`; unknown keys and malformed values are errors.
List-valued keys (``snr_db``, ``receiver``) take comma-separated values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .. import fec
from ..channel import CHANNEL_MODELS
from ..codebook import (
    build_qam,
    build_spread_codebook,
    default_fds_signatures,
    default_sparse_codebooks,
    read_codebooks,
)
from ..core import build_factor_graph
from ..receiver import DETECTORS, TurboConfig

__all__ = ["ScenarioConfig", "ConfigError", "parse_config", "load_config", "builtin_scenarios"]

SCHEMES = ("fds", "sparse", "cb-ofdma")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class ScenarioConfig:
    scheme: str = "fds"
    K: int = 6
    L: int = 4
    M: int = 4
    N_r: int = 2
    payload_bytes: int = 20
    code_rate: float = 0.5
    snr_db: tuple = (0.0,)
    trials: int = 100
    seed: int = 1
    T_outer: int = 3
    T_inner: int = 3
    receiver: tuple = ("epa",)
    channel: str = "block-rayleigh"
    hard_pic: bool = True
    damping: float = 1.0
    codebook_file: str = ""
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for key in ("K", "L", "M", "N_r", "payload_bytes", "trials", "T_outer", "T_inner"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.scheme == "cb-ofdma" and self.L != 1:
            raise ConfigError("cb-ofdma requires L = 1")
        if self.M not in (2, 4, 16):
            raise ConfigError("M must be 2, 4 or 16")
        if self.channel not in CHANNEL_MODELS:
            raise ConfigError(f"channel must be one of {CHANNEL_MODELS}")
        if not self.snr_db:
            raise ConfigError("snr_db list is empty")
        if not self.receiver:
            raise ConfigError("receiver list is empty")
        for r in self.receiver:
            if r not in DETECTORS:
                raise ConfigError(f"unknown receiver {r!r}; choose from {sorted(DETECTORS)}")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must be in (0, 1]")
        try:
            cc = self.code_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        J = int(np.log2(self.M))
        if cc.coded_bits % J:
            raise ConfigError(f"{cc.coded_bits} coded bits do not fill whole {self.M}-ary symbols")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def payload_bits(self) -> int:
        """Information bits before the CRC."""
        return 8 * self.payload_bytes

    def code_config(self, user: int) -> fec.CodeConfig:
        return fec.CodeConfig(self.payload_bits + fec.CRC_BITS, self.code_rate,
                              fec.user_interleaver_seed(self.seed, user))

    @cached_property
    def code_configs(self) -> list:
        return [self.code_config(k) for k in range(self.K)]

    @property
    def n_symbols(self) -> int:
        return self.code_configs[0].coded_bits // int(np.log2(self.M))

    @cached_property
    def codebooks(self) -> list:
        if self.codebook_file:
            cbs = read_codebooks(self.codebook_file)
            if len(cbs) != self.K or cbs[0].length != self.L or cbs[0].size != self.M:
                raise ConfigError(f"{self.codebook_file} does not match K={self.K}, L={self.L}, M={self.M}")
            return cbs
        const = build_qam(self.M)
        if self.scheme == "sparse":
            return default_sparse_codebooks(const, self.K, self.L)
        seqs = default_fds_signatures(self.K, self.L, seed=self.seed)
        return [build_spread_codebook(const, s, user=k) for k, s in enumerate(seqs)]

    @cached_property
    def graph(self):
        return build_factor_graph(self.codebooks)

    def turbo_config(self, receiver: str, T_outer: int | None = None) -> TurboConfig:
        return TurboConfig(receiver, self.T_outer if T_outer is None else T_outer, self.T_inner,
                           self.hard_pic, self.damping)


_CONVERTERS = {
    "scheme": str, "K": int, "L": int, "M": int, "N_r": int, "payload_bytes": int,
    "code_rate": float, "snr_db": _float_list, "trials": int, "seed": int, "T_outer": int,
    "T_inner": int, "receiver": _str_list, "channel": str, "hard_pic": _bool, "damping": float,
    "codebook_file": str,
}


def parse_config(text: str, name: str = "", base_dir: Path | None = None) -> ScenarioConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in _CONVERTERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    if values.get("codebook_file") and base_dir is not None:
        p = Path(values["codebook_file"])
        if not p.is_absolute():
            values["codebook_file"] = str(base_dir / p)
    return ScenarioConfig(name=name, **values)


def builtin_scenarios() -> list:
    folder = resources.files("epa_noma.harness") / "scenarios"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_name) -> ScenarioConfig:
    """Load a config file, or a built-in scenario by name (e.g. ``fds-6ue``)."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_config(p.read_text(), name=p.stem, base_dir=p.parent)
    builtin = resources.files("epa_noma.harness") / "scenarios" / f"{path_or_name}.cfg"
    if builtin.is_file():
        return parse_config(builtin.read_text(), name=str(path_or_name))
    raise ConfigError(f"no config file or built-in scenario named {str(path_or_name)!r}")
