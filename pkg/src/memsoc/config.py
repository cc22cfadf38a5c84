"""Experiment configuration: INI-style sections with strict key checking.

Unknown sections or keys are rejected; missing keys take the documented
defaults. Serialization is canonical (fixed section and key order), so
parse -> serialize -> parse is the identity.
"""

import configparser
import io
from types import SimpleNamespace

from .errors import ConfigError

# section -> key -> (parser, default)
_INT = int
_FLOAT = float
_STR = str


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_tuple(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(","))


SCHEMA = {
    "data": {
        "counts": (_int_tuple, (431, 385, 212)),
        "length": (_INT, 256),
        "noise_amplitude": (_FLOAT, 0.06),
    },
    "pca": {
        "components": (_INT, 128),
        "conditioning": (_INT, 16),
    },
    "classifier": {
        "lambda": (_FLOAT, 1e-4),
        "epochs": (_INT, 120),
        "batch_size": (_INT, 32),
        "learning_rate": (_FLOAT, 1e-3),
        "optimizer": (_STR, "adam"),
        "qat": (_bool, True),
    },
    "diffusion": {
        "steps": (_INT, 500),
        "beta_lo": (_FLOAT, 1e-4),
        "beta_hi": (_FLOAT, 0.02),
        "signal_length": (_INT, 256),
        "patch_size": (_INT, 16),
        "token_dim": (_INT, 64),
        "blocks": (_INT, 4),
        "ff_mult": (_INT, 2),
        "epochs": (_INT, 600),
        "batch_size": (_INT, 64),
        "learning_rate": (_FLOAT, 1e-3),
        "snapshot_every": (_INT, 60),
        "balance_to": (_int_tuple, (2012, 1540, 852)),
        "per_sample": (_INT, 0),
    },
    "device": {
        "program_noise_sigma": (_FLOAT, 1.2),
        "read_noise_sigma": (_FLOAT, 0.3),
        "stuck_off_rate": (_FLOAT, 0.0005),
        "stuck_on_rate": (_FLOAT, 0.0005),
        "pulse_step_fraction": (_FLOAT, 0.3),
        "max_program_iters": (_INT, 100),
        "program_tolerance": (_INT, 1),
        "rmse_criterion": (_FLOAT, 5.0),
    },
    "compile": {
        "g_lo": (_INT, 50),
        "g_hi": (_INT, 200),
        "npu_count": (_INT, 10),
        "clamp_budget": (_FLOAT, 0.01),
    },
    "run": {
        "seed": (_INT, 2026),
        "test_reserve": (_INT, 514),
        "noise": (_STR, "on"),
        "threads": (_INT, 1),
        "ab_seeds": (_INT, 5),
    },
}


def default_config():
    cfg = SimpleNamespace()
    for section, keys in SCHEMA.items():
        ns = SimpleNamespace(**{key: default for key, (_, default) in keys.items()})
        setattr(cfg, section, ns)
    return cfg


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            caster = SCHEMA[section][key][0]
            try:
                value = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            setattr(getattr(cfg, section), key, value)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg):
    buf = io.StringIO()
    for section, keys in SCHEMA.items():
        buf.write(f"[{section}]\n")
        ns = getattr(cfg, section)
        for key in keys:
            value = getattr(ns, key)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            buf.write(f"{key} = {text}\n")
        buf.write("\n")
    return buf.getvalue()


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))
