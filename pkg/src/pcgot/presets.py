"""Named parameter sets."""

from __future__ import annotations

from .errors import ConfigError
from .lpn import LpnParams

PRESETS: dict[str, LpnParams] = {
    "p20": LpnParams(n=1221516, k=168000, t=480, ell=4096),
    "p21": LpnParams(n=2365652, k=262000, t=600, ell=4096),
    "p22": LpnParams(n=4531924, k=328000, t=740, ell=8192),
    "p23": LpnParams(n=8866608, k=452000, t=1024, ell=8192),
    "p24": LpnParams(n=17262496, k=480000, t=2100, ell=8192),
    "toy": LpnParams(n=1024, k=128, t=16, ell=64, d=4),
}

SCALE_PRESETS = ("p20", "p21", "p22", "p23", "p24")


def get_preset(name: str) -> LpnParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
