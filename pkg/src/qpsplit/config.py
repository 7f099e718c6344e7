"""Run configuration: defaults, validation and resolution.

A config file is JSON with a ``schema_version`` and one block per stage.
Unknown keys anywhere are rejected; missing optional keys take the defaults
below.  The fully resolved config is echoed into every run manifest.
"""

import copy
import json

from .circuit import CircuitParams
from .errors import ConfigError

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "circuit": CircuitParams().to_config(),
    "basis": {"n_charge": 6, "n_harm": 24, "n_fock": 12, "n_levels_kept": 30},
    "rabi": {"delta_ghz": 0.863, "g_ghz": 2.225, "omega_r_ghz": 4.462, "delta_green_ghz": None,
             "n_fock": 16},
    "spectrum": {
        "model": "rabi",
        "grid": {"start": 0.0, "stop": 8.0, "num": 81},
        "charges": [[0.0, 0.15, 0.0, 0.0], [0.0, 1.15, 0.0, 0.0]],
        "pairs": [[0, 1], [0, 2], [1, 3]],
    },
    "chargesweep": {
        "island": 2, "grid": {"start": 0.0, "stop": 2.0, "num": 21}, "phi_ext": 0.5018,
        "split_map": None,
    },
    "synth": {
        "kind": "tracestack",
        "n_traces": 84000, "interval_s": 3.0,
        "linewidth_ghz": 0.002, "freq_step_ghz": 0.0002, "noise_sigma": 0.0,
        "dispersion": {"kind": "cosine", "f_mid_ghz": 4.526, "width_max_ghz": 0.018, "phi_ext": 0.5018},
        "background": {"s_1hz": 4.06e-2 ** 2, "gamma": 1.0, "offset": 0.15},
        "telegraph": {"rate_even_to_odd": 1000.0, "rate_odd_to_even": 1000.0,
                      "probe_window": 0.02, "threshold": 0.1},
        "spectrogram": {"bias": {"start": 0.0, "stop": 8.0, "num": 81},
                        "freq": {"start": 0.5, "stop": 9.0, "step": 0.002}},
    },
    "extract": {"smooth_sigma": 1.0, "k_mad": 5.0, "max_jump_ghz": 0.005, "min_len": 10, "max_gap": 1,
                "bin_width_mhz": 0.5},
    "invert": {"mode": "cosine", "width_max_ghz": 0.018, "tol": 0.02},
    "psd": {"segment_len": None, "overlap": 0.5, "band_hz": None, "max_gap": 5},
    "fit": {"model": "rabi", "n_starts": 8, "fit_bias_map": False, "bias_map": [1.0, 0.0],
            "free": ["e_j", "e_c", "omega_r", "l_r", "alpha", "beta", "u", "eta", "q_g2"],
            "eta_mode": "tied", "q_g2": 0.15,
            "constraints": {"f_mid_ghz": 4.526, "max_split_ghz": 0.018}},
    "inputs": {},
}

# blocks whose value may be replaced wholesale (null or free-form)
_OPEN = {("chargesweep", "split_map"), ("synth", "telegraph"), ("inputs",), ("fit", "constraints"),
         ("rabi", "delta_green_ghz"), ("psd", "segment_len"), ("psd", "band_hz")}

REQUIRED = {
    "spectrum": [("spectrum", "model"), ("spectrum", "grid")],
    "chargesweep": [("chargesweep", "grid")],
    "synth": [("synth",)],
    "extract": [("inputs", "stack")],
    "invert": [("inputs", "splits")],
    "psd": [("inputs", "charge")],
    "fit": [("inputs", "ridges"), ("fit", "model")],
    "pipeline": [("synth",)],
}


def _merge(default, user, path):
    if not isinstance(user, dict):
        raise ConfigError(f"'{'.'.join(path)}' must be an object")
    out = copy.deepcopy(default)
    for k, v in user.items():
        p = path + (k,)
        if k not in default:
            raise ConfigError(f"unknown config key '{'.'.join(p)}'")
        if p in _OPEN or v is None or not isinstance(default[k], dict):
            out[k] = v
        else:
            out[k] = _merge(default[k], v, p)
    return out


def _has(cfg, path):
    node = cfg
    for k in path:
        if not isinstance(node, dict) or k not in node:
            return False
        node = node[k]
    return True


def resolve(user, command=None, seed=None):
    """Validate ``user`` against the schema and fill defaults."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in user:
        raise ConfigError("missing required key 'schema_version'")
    if user["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {user['schema_version']!r}")
    cfg = _merge(DEFAULTS, user, ())
    for path in REQUIRED.get(command, []):
        if not _has(user, path):
            raise ConfigError(f"missing required key '{'.'.join(path)}'")
    if seed is not None:
        cfg["seed"] = int(seed)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("'seed' must be an integer")
    try:
        CircuitParams.from_config(cfg["circuit"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid circuit block: {exc}") from None
    return cfg


def load(path, command=None, seed=None):
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return resolve(user, command, seed)
