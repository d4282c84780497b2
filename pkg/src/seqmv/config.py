"""TOML configuration files.

Every section and key is checked against a fixed table; a typo is an error,
not a silently ignored default.  ``TEMPLATE`` is the documented minimal file.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import Config, ConfigError, validate_config

__all__ = ["TEMPLATE", "parse_config", "parse_config_text", "config_hash"]

TEMPLATE = """\
# Only [time] is mandatory; every other section falls back to the defaults shown.

[time]
t_end = 1.0          # horizon T > 0
n_steps = 200        # M, so dt = T / M

[diffusion]
dim = 1              # 1 or 2
sigma = 1.0          # scalar (times identity) or a dim x dim matrix

[kernel]
kind = "cosine_diff" # zero | cosine_diff | tanh_attract | bounded_gauss | cosine_y
a = 1.0
omega = 1.0          # cosine_diff only

[drift]
kind = "zero"        # zero | tabulated (then: times, x, values, sup_norm)

[initial]
kind = "gaussian"    # gaussian (mean, var) | uniform (lo, hi) | point (x0)
mean = 0.0
var = 1.0

[rng]
seed = 0             # unsigned 64-bit; --seed on the command line overrides it

[scheme]
kind = "uniform"     # uniform | power (r, c) | custom (alpha list, alpha[0] = 1)

[pde]
dx = 0.02            # or n_cells; x_min/x_max default to an 8 sd coverage window

[experiment]
# n_replicas, i_list, N_list, N, beta, r_list, tail_fraction,
# spde_replicas, spde_dx, i_max, check_dt_halving
"""


def parse_config_text(text: str, source: str = "<string>") -> tuple[Config, dict]:
    """Parse and validate TOML text; returns the config and the raw mapping."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # tomli messages end with "(at line L, column C)"
        raise ConfigError(f"{source}: TOML parse error: {exc}") from exc
    try:
        cfg = validate_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid value: {exc}") from exc
    return cfg, raw


def parse_config(path) -> Config:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))[0]


def config_hash(raw: dict, seed: int | None = None) -> str:
    """SHA-256 of the canonical JSON form of a parsed file plus the seed override."""
    blob = json.dumps({"config": raw, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
