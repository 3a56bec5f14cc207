"""Experiment configuration: flat sectioned key-value files (INI syntax).

All quantities are in the model's nondimensional units. Unknown sections or
keys are rejected so typos cannot silently fall back to defaults. Flag
overrides (`section.key=value`) take precedence over file values; the
effective configuration is echoed into the output directory for provenance.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass

import numpy as np

from plmx.core import ModelParams, NoiseSpec


class ConfigError(ValueError):
    pass


_KNOWN = {
    "model": {"kind"},
    "params": {"p", "dim", "length", "n_grid", "dt", "eps_reg", "r_order"},
    "noise": {"coeffs"},
    "x0": {"type", "value", "amplitude", "mode", "path"},
    "schedule": {"times", "eps_grid"},
    "ensemble": {"n_paths", "seed"},
    "bounds": {"lam", "c_big", "lambda_noise"},
    "output": {"dir"},
}

_REQUIRED_SECTIONS = ("model", "params", "x0", "schedule", "ensemble", "output")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: ModelParams
    noise: NoiseSpec
    x0_kind: str
    x0_value: float
    x0_amplitude: float
    x0_mode: int
    x0_path: str
    times: tuple[float, ...]
    eps_grid: tuple[float, ...]
    n_paths: int
    seed: int
    out_dir: str
    bounds: tuple[float, float, float] | None  # (lam, c_big, lambda_noise)

    def x0_field_values(self) -> np.ndarray:
        """Initial nodal values for the field model."""
        if self.model != "field":
            raise ConfigError("x0_field_values is only defined for field models")
        if self.x0_kind == "constant":
            return np.full(self.params.n_nodes, self.x0_value)
        if self.x0_kind == "sine":
            p = self.params
            z = p.h * np.arange(1, p.n_grid + 1)
            s = np.sin(self.x0_mode * np.pi * z / p.length)
            if p.dim == 1:
                return self.x0_amplitude * s
            return self.x0_amplitude * np.outer(s, s).ravel()
        values = np.loadtxt(self.x0_path, delimiter=",", ndmin=1)
        if values.shape != (self.params.n_nodes,):
            raise ConfigError(
                f"x0 file holds {values.shape} values, grid needs {self.params.n_nodes}"
            )
        return values

    def x0_scalar(self) -> float:
        if self.model != "scalar":
            raise ConfigError("x0_scalar is only defined for scalar models")
        return self.x0_value


def _parse_floats(text: str) -> tuple[float, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(float(s) for s in items)


def _build_parser(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {ov!r}")
        target, value = ov.split("=", 1)
        section, key = target.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section.strip(), key.strip(), value.strip())
    return cp


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    cp = _build_parser(path, overrides or [])

    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in _KNOWN[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    for section in _REQUIRED_SECTIONS:
        if not cp.has_section(section):
            raise ConfigError(f"missing required section [{section}]")

    model = cp.get("model", "kind", fallback=None)
    if model not in ("scalar", "field"):
        raise ConfigError(f"model.kind must be 'scalar' or 'field', got {model!r}")

    try:
        params = ModelParams(
            p=cp.getfloat("params", "p"),
            dim=cp.getint("params", "dim", fallback=1),
            length=cp.getfloat("params", "length", fallback=1.0),
            n_grid=cp.getint("params", "n_grid", fallback=64),
            dt=cp.getfloat("params", "dt"),
            eps_reg=cp.getfloat("params", "eps_reg", fallback=0.0),
            r_order=cp.getfloat("params", "r_order", fallback=2.0),
        )
    except (ValueError, configparser.NoOptionError) as exc:
        raise ConfigError(f"invalid [params]: {exc}") from exc

    coeffs = ()
    if cp.has_section("noise"):
        coeffs = _parse_floats(cp.get("noise", "coeffs", fallback=""))
    noise = NoiseSpec(coeffs)

    x0_kind = cp.get("x0", "type", fallback=None)
    if x0_kind not in ("constant", "sine", "file"):
        raise ConfigError(f"x0.type must be constant|sine|file, got {x0_kind!r}")
    x0_value = cp.getfloat("x0", "value", fallback=0.0)
    x0_amplitude = cp.getfloat("x0", "amplitude", fallback=1.0)
    x0_mode = cp.getint("x0", "mode", fallback=1)
    x0_path = cp.get("x0", "path", fallback="")
    if x0_kind == "file":
        if not x0_path:
            raise ConfigError("x0.type=file requires x0.path")
        if not os.path.exists(x0_path):
            raise ConfigError(f"x0 file not found: {x0_path}")
    if model == "scalar" and x0_kind == "sine":
        raise ConfigError("x0.type=sine is only valid for field models")

    times = _parse_floats(cp.get("schedule", "times", fallback=""))
    if not times or times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("schedule.times must be a nonempty increasing list")
    eps_grid = _parse_floats(cp.get("schedule", "eps_grid", fallback=""))
    if eps_grid and any(e <= 0 for e in eps_grid):
        raise ConfigError("schedule.eps_grid entries must be positive")

    try:
        n_paths = cp.getint("ensemble", "n_paths")
        seed = cp.getint("ensemble", "seed")
    except (ValueError, configparser.NoOptionError) as exc:
        raise ConfigError(f"invalid [ensemble]: {exc}") from exc
    if n_paths < 1:
        raise ConfigError("ensemble.n_paths must be >= 1")

    bounds = None
    if cp.has_section("bounds"):
        try:
            bounds = (
                cp.getfloat("bounds", "lam"),
                cp.getfloat("bounds", "c_big"),
                cp.getfloat("bounds", "lambda_noise", fallback=0.5),
            )
        except (ValueError, configparser.NoOptionError) as exc:
            raise ConfigError(f"invalid [bounds]: {exc}") from exc

    out_dir = cp.get("output", "dir", fallback=None)
    if not out_dir:
        raise ConfigError("output.dir is required")

    return ExperimentConfig(
        model=model,
        params=params,
        noise=noise,
        x0_kind=x0_kind,
        x0_value=x0_value,
        x0_amplitude=x0_amplitude,
        x0_mode=x0_mode,
        x0_path=x0_path,
        times=times,
        eps_grid=eps_grid,
        n_paths=n_paths,
        seed=seed,
        out_dir=out_dir,
        bounds=bounds,
    )


def physics_config_text(cfg: ExperimentConfig) -> str:
    """Canonical rendering of the dynamics-defining part of a configuration.

    This is what checkpoint hashes cover: model kind, model parameters, noise
    spectrum, initial datum, ensemble size, and seed. Schedule and output
    location are excluded so an interrupted run can resume under a different
    schedule tail or output directory.
    """
    parts = [
        f"model={cfg.model}",
        f"p={cfg.params.p!r}",
        f"dim={cfg.params.dim}",
        f"length={cfg.params.length!r}",
        f"n_grid={cfg.params.n_grid}",
        f"dt={cfg.params.dt!r}",
        f"eps_reg={cfg.params.eps_reg!r}",
        f"r_order={cfg.params.r_order!r}",
        "coeffs=" + ",".join(repr(b) for b in cfg.noise.coeffs),
        f"x0={cfg.x0_kind}:{cfg.x0_value!r}:{cfg.x0_amplitude!r}:{cfg.x0_mode}:{cfg.x0_path}",
        f"n_paths={cfg.n_paths}",
        f"seed={cfg.seed}",
    ]
    return "\n".join(parts) + "\n"


def effective_config_text(cfg: ExperimentConfig) -> str:
    """Canonical INI rendering of the effective configuration.

    This text is what gets echoed to the output directory and hashed into
    checkpoints, so its formatting must stay byte-stable.
    """
    cp = configparser.ConfigParser()
    cp["model"] = {"kind": cfg.model}
    cp["params"] = {
        "p": repr(cfg.params.p),
        "dim": str(cfg.params.dim),
        "length": repr(cfg.params.length),
        "n_grid": str(cfg.params.n_grid),
        "dt": repr(cfg.params.dt),
        "eps_reg": repr(cfg.params.eps_reg),
        "r_order": repr(cfg.params.r_order),
    }
    cp["noise"] = {"coeffs": ", ".join(repr(b) for b in cfg.noise.coeffs)}
    cp["x0"] = {
        "type": cfg.x0_kind,
        "value": repr(cfg.x0_value),
        "amplitude": repr(cfg.x0_amplitude),
        "mode": str(cfg.x0_mode),
        "path": cfg.x0_path,
    }
    cp["schedule"] = {
        "times": ", ".join(repr(t) for t in cfg.times),
        "eps_grid": ", ".join(repr(e) for e in cfg.eps_grid),
    }
    cp["ensemble"] = {"n_paths": str(cfg.n_paths), "seed": str(cfg.seed)}
    if cfg.bounds is not None:
        cp["bounds"] = {
            "lam": repr(cfg.bounds[0]),
            "c_big": repr(cfg.bounds[1]),
            "lambda_noise": repr(cfg.bounds[2]),
        }
    cp["output"] = {"dir": cfg.out_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
