"""Run configuration and the reproducibility manifest.

Configs are flat `key = value` text with `#` comments; every key has
a default, so an empty file (or none at all) is a valid run.  Flag
overrides go through the same converters as file values, keeping one
parsing path.  The manifest written next to each run's outputs embeds
the resolved config verbatim plus the derived analytic constants, and
is enough to reproduce the run exactly.
"""

__all__ = ["ConfigError", "ExperimentConfig", "parse_config",
           "config_fields", "RunManifest", "manifest_for"]

import dataclasses
import json
from dataclasses import dataclass

import numpy as np


class ConfigError(Exception):
    """Bad key, bad value, or unreadable config text."""


def _as_float(text):
    return float(text)


def _as_int(text):
    return int(text, 0)


def _as_u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("out of unsigned 64-bit range")
    return v


def _as_str(text):
    return str(text)


def _as_system(text):
    if text not in ("cat", "geodesic"):
        raise ValueError("must be 'cat' or 'geodesic'")
    return text


def _as_coords(text):
    parts = [p for p in str(text).replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ValueError("need exactly three numbers")
    return tuple(float(p) for p in parts)


def _as_t(text):
    if str(text).strip() == "auto":
        return "auto"
    v = float(text)
    if v < 0.0:
        raise ValueError("shear strength cannot be negative")
    return v


def _as_float_list(text):
    parts = [p for p in str(text).replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


# name -> (converter, default, help); the single source of truth for
# keys, flag names and the README table
_FIELDS = {
    "system": (_as_system, "cat", "model: cat or geodesic"),
    "roof": (_as_float, float(np.sqrt(2.0)),
             "suspension return time; irrational keeps fibers dense"),
    "chart_base": (_as_coords, (0.1234, 0.271, 0.55),
                   "chart center on the suspension, x y s"),
    "gamma": (_as_float, 0.2, "chart box half-width"),
    "eps": (_as_float, 0.05, "mollifier width; support half-width 2*eps"),
    "t": (_as_t, "auto",
          "shear strength, or auto for min(eps^3, injectivity ceiling)"),
    "steps": (_as_int, 100000, "orbit length per estimator run"),
    "settle": (_as_int, 80, "center-direction settling steps"),
    "orbits": (_as_int, 8, "independent initial conditions"),
    "batches": (_as_int, 100, "batch count for standard errors"),
    "seed": (_as_u64, 0, "64-bit unsigned experiment seed"),
    "out_dir": (_as_str, "runs", "output directory"),
    "grid": (_as_int, 64, "audit grid points per axis"),
    "disk_base": (_as_coords, (0.321, 0.7654, 0.11),
                  "unstable disk center, x y s"),
    "disk_len": (_as_float, 0.01, "unstable disk half-length"),
    "samples": (_as_int, 4096, "disk sample count"),
    "iters": (_as_int, 200, "pushforwards averaged into the cloud"),
    "region": (_as_str, "support",
               "visit region: all, support, chart, or box:<half>"),
    "stretch_stride": (_as_int, 100,
                       "orbit thinning for the log-stretch observable"),
    "eps_list": (_as_float_list, (),
                 "optional eps sweep for the exponent trend file"),
}


def config_fields():
    """name -> (default, help) for docs and CLI flag generation."""
    return {k: (d, h) for k, (_, d, h) in _FIELDS.items()}


@dataclass
class ExperimentConfig:
    system: str
    roof: float
    chart_base: tuple
    gamma: float
    eps: float
    t: object
    steps: int
    settle: int
    orbits: int
    batches: int
    seed: int
    out_dir: str
    grid: int
    disk_base: tuple
    disk_len: float
    samples: int
    iters: int
    region: str
    stretch_stride: int
    eps_list: tuple

    def as_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _convert(key, raw, where):
    conv = _FIELDS[key][0]
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError("%s: bad value for %r: %s" % (where, key, exc))


def parse_config(path=None, overrides=None):
    """Config from an optional file plus flag overrides.

    Unknown keys name the full valid set; value errors carry the file
    line number.  Overrides are raw strings (or already-typed values)
    applied after the file, so flags win.
    """
    values = {k: d for k, (_, d, _h) in _FIELDS.items()}
    if path is not None:
        try:
            text = open(path, "r", encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError("cannot read config: %s" % exc)
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError("line %d: expected 'key = value'"
                                  % lineno)
            key, _, raw = body.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in _FIELDS:
                raise ConfigError(
                    "line %d: unknown key %r (valid keys: %s)"
                    % (lineno, key, ", ".join(sorted(_FIELDS))))
            values[key] = _convert(key, raw, "line %d" % lineno)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _FIELDS:
            raise ConfigError("unknown key %r (valid keys: %s)"
                              % (key, ", ".join(sorted(_FIELDS))))
        if isinstance(raw, str):
            values[key] = _convert(key, raw, "flag --%s"
                                   % key.replace("_", "-"))
        else:
            values[key] = raw
    return ExperimentConfig(**values)


@dataclass
class RunManifest:
    """Everything needed to reproduce one run.

    Holds the resolved config, the certified constants and the shear
    strength actually used, the produced files, the wall clock and
    the package version.  The wall clock is the one field allowed to
    differ between reruns.
    """

    subcommand: str
    config: dict
    derived: dict
    outputs: list
    version: str
    wall_clock_s: float
    error: str = None

    def write(self, path):
        blob = dataclasses.asdict(self)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def read(path):
        with open(path, "r", encoding="utf-8") as fh:
            return RunManifest(**json.load(fh))


def manifest_for(subcommand, config, profile, t_used):
    cert = profile.certificate()
    derived = {
        "C": cert["C"],
        "C2": cert["C2"],
        "s0": cert["s0"],
        "t_used": t_used,
    }
    return RunManifest(
        subcommand=subcommand,
        config=config.as_dict(),
        derived=derived,
        outputs=[],
        version=_package_version(),
        wall_clock_s=0.0,
    )


def _package_version():
    from . import __version__
    return __version__
