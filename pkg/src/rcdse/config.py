"""Run configuration: a two-level JSON object ``{section: {key: value}}``.

Every key has a default (see :data:`DEFAULTS` or ``rcdse show-config``).
Unknown sections or keys are rejected. Values given on the command line as
``--set section.key=value`` are parsed as JSON when possible, else taken as
strings, and must match the type of the default.
"""
import copy
import json
import os
from dataclasses import fields

from . import losses, solvers
from .distill import DistillConfig, TeacherConfig
from .errors import ConfigError, MissingFileError, RcdError
from .losses import LossWeights, ProxyConfig
from .network import NetworkSpec
from .sde import SdeParams
from .signal import CLEAN_KINDS, NOISE_KINDS, StftConfig

ENV_VAR = "RCDSE_CONFIG"


def _defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "sde": _defaults(SdeParams),
    "stft": _defaults(StftConfig),
    "network": _defaults(NetworkSpec, skip=("n_freq",)),
    "precond": {"sigma_data": 0.5},
    "teacher": _defaults(TeacherConfig, skip=("sigma_data",)),
    "distill": {
        **_defaults(DistillConfig, skip=("weights", "proxy", "sigma_data")),
        "lambda1": LossWeights().lambda1,
        "lambda2": LossWeights().lambda2,
        "cd_weight": LossWeights().cd_weight,
        "proxy_resolutions": [list(r) for r in ProxyConfig().resolutions],
        "proxy_eps": ProxyConfig().eps,
    },
    "data": {
        "manifest": "",
        "heldout_manifest": "",
        "n_pairs": 64,
        "seed": 0,
        "duration": 1.0,
        "sample_rate": 16000,
        "snr_grid": [0.0, 5.0, 10.0, 15.0],
        "clean_kinds": list(CLEAN_KINDS),
        "noise_kinds": list(NOISE_KINDS),
        "norm_rms": 0.05,
    },
    "bench": {"warmup": 1, "reps": 3, "n_grid": 30, "solver": solvers.HEUN, "seed": 0, "workers": 1},
    "run": {"output_dir": "runs", "pesq_executable": ""},
}


def _type_ok(default, value):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def merge(base, overrides, origin="config"):
    """Return ``base`` updated from a nested dict, rejecting unknown keys."""
    if not isinstance(overrides, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    out = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{origin}: unknown section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: section {section!r} must be an object")
        for key, value in values.items():
            set_value(out, f"{section}.{key}", value, origin)
    return out


def set_value(cfg, dotted, value, origin="--set"):
    section, _, key = dotted.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"{origin}: unknown key {dotted!r}")
    default = DEFAULTS[section][key]
    if not _type_ok(default, value):
        raise ConfigError(f"{origin}: {dotted} expects {type(default).__name__}, got {value!r}")
    if isinstance(default, float):
        value = float(value)
    cfg[section][key] = value


def parse_assignment(text):
    """``'section.key=value'`` -> ``(dotted, value)``."""
    dotted, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.strip(), value


def load(path=None, assignments=()):
    """Defaults, then the config file (``path`` or ``$RCDSE_CONFIG``), then assignments."""
    cfg = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(ENV_VAR) or None
    if path:
        if not os.path.exists(path):
            raise MissingFileError(f"{path}: no such config file")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        cfg = merge(cfg, data, origin=path)
    for text in assignments:
        set_value(cfg, *parse_assignment(text))
    validate(cfg)
    return cfg


def dump(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def describe():
    """One ``section.key = default`` line per key."""
    return "\n".join(f"  {s}.{k} = {json.dumps(v)}" for s, vals in DEFAULTS.items() for k, v in vals.items())


# ---------------------------------------------------------------- builders

def sde_params(cfg):
    return SdeParams(**cfg["sde"])


def stft_config(cfg):
    return StftConfig(**cfg["stft"])


def network_spec(cfg):
    return NetworkSpec(n_freq=stft_config(cfg).n_freq, **cfg["network"])


def teacher_config(cfg):
    return TeacherConfig(sigma_data=cfg["precond"]["sigma_data"], **cfg["teacher"])


def distill_config(cfg):
    d = dict(cfg["distill"])
    weights = LossWeights(d.pop("lambda1"), d.pop("lambda2"), d.pop("cd_weight"))
    proxy = losses.ProxyConfig(tuple(tuple(r) for r in d.pop("proxy_resolutions")), d.pop("proxy_eps"))
    return DistillConfig(weights=weights, proxy=proxy, sigma_data=cfg["precond"]["sigma_data"], **d)


def validate(cfg):
    """Build every object once so bad values surface as configuration errors."""
    try:
        sde_params(cfg)
        network_spec(cfg)
        teacher_config(cfg)
        distill_config(cfg)
        for kind in cfg["data"]["clean_kinds"]:
            if kind not in CLEAN_KINDS:
                raise ConfigError(f"unknown clean kind {kind!r}")
        for kind in cfg["data"]["noise_kinds"]:
            if kind not in NOISE_KINDS:
                raise ConfigError(f"unknown noise kind {kind!r}")
        if cfg["bench"]["solver"] not in solvers.SOLVERS:
            raise ConfigError(f"unknown solver {cfg['bench']['solver']!r}")
    except ConfigError:
        raise
    except (RcdError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
