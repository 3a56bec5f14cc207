"""Batch experiment runner: binds configuration files to module pipelines
with deterministic seeds, optional worker pools for ensemble generation, and
CSV/report emission.

Exit codes: 0 all checks pass, 1 a check failed (details in the report),
2 configuration error, 3 numerical failure. Every failure prints a single
machine-readable reason line `plmx-error kind=<...> detail=<...>` on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from plmx import experiments, field, mixing, scalar
from plmx.checkpoint import (
    Checkpoint,
    CheckpointError,
    config_hash,
    read_checkpoint,
    write_checkpoint,
)
from plmx.config import (
    ConfigError,
    ExperimentConfig,
    effective_config_text,
    load_config,
    physics_config_text,
)
from plmx.core import ModelParams, NoiseSpec
from plmx.field import StepFailureError
from plmx.tables import CONVERGENCE_TABLE, MIXING_TABLE


def _fmt(x) -> str:
    """Shortest round-trip float formatting (byte-stable across runs)."""
    return repr(float(x))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _ensure_outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "effective_config.ini"), "w", encoding="utf-8") as fh:
        fh.write(effective_config_text(cfg))
    return cfg.out_dir


def noise_class(cfg: ExperimentConfig) -> str:
    if cfg.model == "scalar":
        return "non-degenerate"
    coeffs = cfg.noise.coeffs
    if not coeffs or all(b == 0.0 for b in coeffs):
        return "0"
    if len(coeffs) >= cfg.params.n_grid ** cfg.params.dim and all(b != 0.0 for b in coeffs):
        return "non-degenerate"
    return "degenerate"


def table_source(p: float, noise: str) -> str:
    """Source tag of the table row matching an experiment's regime."""
    if p > 2:
        return {"0": "deterministic-degenerate", "degenerate": "pathwise-contraction"}.get(
            noise, "noise-stabilized"
        )
    if p == 2:
        return "heat"
    if noise == "0":
        return "deterministic-singular-exponential"
    return "singular-moment" if p >= np.sqrt(2.0) else "singular-moment-holder"


# ---------------------------------------------------------------------------
# ensemble generation with a worker pool (contiguous path chunks; per-path
# streams make the result independent of the chunking)
# ---------------------------------------------------------------------------


def _scalar_chunk(args):
    x0, p, dt, times, seed, lo, count = args
    return scalar.sde_ensemble_states(x0, p, dt, times, count, seed, first_stream=lo)[1]


def _field_chunk(args):
    params, noise, x0_values, times, seed, lo, count, init, skip, t0 = args
    return field.spde_ensemble_states(
        params, noise, x0_values, times, count, seed,
        first_stream=lo, init_states=init, skip_draws=skip, t0=t0,
    )[1]


def _chunk_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(workers, n))
    base, extra = divmod(n, workers)
    ranges = []
    lo = 0
    for i in range(workers):
        count = base + (1 if i < extra else 0)
        ranges.append((lo, count))
        lo += count
    return ranges


def _parallel_states(worker, common, n_paths: int, workers: int):
    jobs = [common + (lo, count) for lo, count in _chunk_ranges(n_paths, workers)]
    if len(jobs) == 1 or workers <= 1:
        parts = [worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(worker, jobs))
    return np.concatenate(parts, axis=1)


def scalar_states_parallel(cfg: ExperimentConfig, workers: int):
    common = (cfg.x0_scalar(), cfg.params.p, cfg.params.dt, cfg.times, cfg.seed)
    states = _parallel_states(_scalar_chunk, common, cfg.n_paths, workers)
    idx = np.rint(np.asarray(cfg.times) / cfg.params.dt).astype(int)
    return cfg.params.dt * idx, states


def field_states_parallel(
    cfg: ExperimentConfig,
    workers: int,
    times=None,
    init_states: np.ndarray | None = None,
    skip_draws: int = 0,
    t0: float = 0.0,
):
    times = cfg.times if times is None else times
    ranges = _chunk_ranges(cfg.n_paths, workers)
    jobs = []
    for lo, count in ranges:
        init = None if init_states is None else init_states[lo : lo + count]
        jobs.append(
            (cfg.params, cfg.noise, cfg.x0_field_values(), times, cfg.seed, lo, count, init, skip_draws, t0)
        )
    if len(jobs) == 1 or workers <= 1:
        parts = [_field_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_field_chunk, jobs))
    states = np.concatenate(parts, axis=1)
    idx = np.rint((np.asarray(times) - t0) / cfg.params.dt).astype(int)
    return t0 + cfg.params.dt * idx, states


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run_ode(cfg: ExperimentConfig, workers: int) -> int:
    if cfg.model != "scalar":
        raise ConfigError("run-ode requires model.kind=scalar")
    out = _ensure_outdir(cfg)
    x0 = cfg.x0_scalar()
    rows = [
        (_fmt(t), _fmt(scalar.ode_exact(x0, cfg.params.p, t))) for t in cfg.times
    ]
    _write_csv(os.path.join(out, "trajectory.csv"), ["t", "value"], rows)
    return 0


def cmd_run_sde(cfg: ExperimentConfig, workers: int) -> int:
    if cfg.model != "scalar":
        raise ConfigError("run-sde requires model.kind=scalar")
    out = _ensure_outdir(cfg)
    snapped, states = scalar_states_parallel(cfg, workers)
    for i in range(cfg.n_paths):
        rows = [(_fmt(t), _fmt(v)) for t, v in zip(snapped, states[:, i])]
        _write_csv(os.path.join(out, f"trajectory_{i:05d}.csv"), ["t", "value"], rows)
    _write_csv(
        os.path.join(out, "final_states.csv"),
        ["path", "value"],
        [(str(i), _fmt(states[-1, i])) for i in range(cfg.n_paths)],
    )
    return 0


def _write_trace(path: str, trace: field.NormTrace) -> None:
    header = ["t", "l2", "lm", "linf", "w1p"]
    rows = []
    for i, t in enumerate(trace.times):
        lm = "" if trace.lm is None else _fmt(trace.lm[i])
        rows.append((_fmt(t), _fmt(trace.l2[i]), lm, _fmt(trace.linf[i]), _fmt(trace.w1p[i])))
    _write_csv(path, header, rows)


def _write_field_snapshot(path: str, params: ModelParams, values: np.ndarray) -> None:
    coords = params.interior_coords()
    if params.dim == 1:
        rows = [(_fmt(z), _fmt(v)) for z, v in zip(coords, values)]
        _write_csv(path, ["z", "value"], rows)
    else:
        rows = [
            (_fmt(c[0]), _fmt(c[1]), _fmt(v)) for c, v in zip(coords, values)
        ]
        _write_csv(path, ["z", "y", "value"], rows)


def cmd_run_pde(cfg: ExperimentConfig, workers: int) -> int:
    if cfg.model != "field":
        raise ConfigError("run-pde requires model.kind=field")
    out = _ensure_outdir(cfg)
    x0 = field.FieldState(cfg.x0_field_values(), cfg.params)
    final, trace = field.evolve_deterministic(
        x0, cfg.times[-1], output_times=np.asarray(cfg.times)
    )
    _write_trace(os.path.join(out, "trace.csv"), trace)
    _write_field_snapshot(os.path.join(out, "final_state.csv"), cfg.params, final.values)
    return 0


def _spde_outputs(cfg: ExperimentConfig, out: str, snapped, states, step_count: int) -> None:
    w = cfg.params.quad_weight
    rows = []
    for i, t in enumerate(snapped):
        l2 = np.sqrt(w * np.sum(states[i] ** 2, axis=1))
        rows.append((_fmt(t), _fmt(l2.mean()), _fmt(l2.std(ddof=1) if len(l2) > 1 else 0.0)))
    _write_csv(os.path.join(out, "ensemble_l2.csv"), ["t", "mean_l2", "sd_l2"], rows)
    _write_csv(
        os.path.join(out, "final_states.csv"),
        ["path"] + [f"u{j}" for j in range(states.shape[2])],
        [
            (str(i),) + tuple(_fmt(v) for v in states[-1, i])
            for i in range(states.shape[1])
        ],
    )
    ckpt = Checkpoint(
        config_hash=config_hash(physics_config_text(cfg)),
        seed=cfg.seed,
        first_stream=0,
        t=float(snapped[-1]),
        step_count=step_count,
        states=states[-1],
    )
    write_checkpoint(os.path.join(out, "ensemble.plmx"), ckpt)


def cmd_run_spde(cfg: ExperimentConfig, workers: int) -> int:
    if cfg.model != "field":
        raise ConfigError("run-spde requires model.kind=field")
    out = _ensure_outdir(cfg)
    snapped, states = field_states_parallel(cfg, workers)
    step_count = int(round(cfg.times[-1] / cfg.params.dt))
    _spde_outputs(cfg, out, snapped, states, step_count)
    return 0


def cmd_resume(cfg: ExperimentConfig, workers: int, checkpoint_path: str) -> int:
    if cfg.model != "field":
        raise ConfigError("resume requires model.kind=field")
    ckpt = read_checkpoint(checkpoint_path)
    want = config_hash(physics_config_text(cfg))
    if ckpt.config_hash != want:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {ckpt.config_hash.hex()} vs config {want.hex()}"
        )
    if ckpt.states.shape[0] != cfg.n_paths or ckpt.seed != cfg.seed % (1 << 64):
        raise CheckpointError("checkpoint ensemble does not match the configuration")
    out = _ensure_outdir(cfg)
    remaining = [t for t in cfg.times if t > ckpt.t + 1e-12]
    if not remaining:
        raise ConfigError("nothing to resume: checkpoint is at or past the final time")
    skip = ckpt.step_count * cfg.noise.truncation
    snapped, states = field_states_parallel(
        cfg, workers, times=remaining, init_states=ckpt.states, skip_draws=skip, t0=ckpt.t
    )
    step_count = ckpt.step_count + int(round((remaining[-1] - ckpt.t) / cfg.params.dt))
    _spde_outputs(cfg, out, snapped, states, step_count)
    return 0


def _build_curve(cfg: ExperimentConfig, workers: int):
    if cfg.model == "scalar":
        density = scalar.invariant_build(cfg.params.p)
        pre = scalar_states_parallel(cfg, workers)
        curve = mixing.scalar_distance_curve(
            cfg.params.p,
            cfg.x0_scalar(),
            np.asarray(cfg.times),
            cfg.n_paths,
            cfg.params.r_order,
            cfg.seed,
            cfg.params.dt,
            density,
            precomputed=pre,
        )
        x_norm = abs(cfg.x0_scalar())
        return curve, density, x_norm
    x0 = cfg.x0_field_values()
    stat, _ = mixing.stationary_field_ensemble(cfg.params, cfg.noise, x0, cfg.n_paths, cfg.seed)
    pre = field_states_parallel(cfg, workers)
    curve = mixing.field_distance_curve(
        cfg.params,
        cfg.noise,
        x0,
        np.asarray(cfg.times),
        cfg.n_paths,
        cfg.params.r_order,
        cfg.seed,
        stationary_states=stat,
        precomputed=pre,
    )
    x_norm = float(np.sqrt(cfg.params.quad_weight * np.sum(x0**2)))
    return curve, None, x_norm


def _write_curve(out: str, curve: mixing.DistanceCurve) -> None:
    rows = [
        (_fmt(t), _fmt(r), _fmt(s), _fmt(e))
        for t, r, s, e in zip(curve.times, curve.raw, curve.se, curve.envelope)
    ]
    _write_csv(os.path.join(out, "curve.csv"), ["t", "w_raw", "w_se", "w_env"], rows)


def cmd_distance_curve(cfg: ExperimentConfig, workers: int) -> int:
    out = _ensure_outdir(cfg)
    curve, _, _ = _build_curve(cfg, workers)
    _write_curve(out, curve)
    return 0


def cmd_mixing_time(cfg: ExperimentConfig, workers: int) -> int:
    if not cfg.eps_grid:
        raise ConfigError("mixing-time requires schedule.eps_grid")
    out = _ensure_outdir(cfg)
    curve, density, x_norm = _build_curve(cfg, workers)
    _write_curve(out, curve)
    eps_grid = np.asarray(sorted(cfg.eps_grid, reverse=True))
    taus = [mixing.mixing_time(curve, e) for e in eps_grid]
    if cfg.bounds is not None:
        consts = mixing.BoundConstants(
            lam=cfg.bounds[0], c_big=cfg.bounds[1], lambda_noise=cfg.bounds[2],
            provenance="user-supplied",
        )
    else:
        try:
            consts = mixing.fit_bound_constants(cfg.params, eps_grid, taus, x_norm)
        except field.InsufficientDataError:
            consts = None
    try:
        fit = mixing.fit_scaling(eps_grid, taus)
        fit_family, fit_param = fit.family, fit.slope
    except field.InsufficientDataError:
        fit_family, fit_param = "", float("nan")
    source = table_source(cfg.params.p, noise_class(cfg))
    rows = []
    for e, tau in zip(eps_grid, taus):
        upper = lower = ""
        if consts is not None:
            recs = mixing.theoretical_bounds(
                cfg.params, cfg.noise, x_norm, consts, float(e),
                density=density, scalar_x=cfg.x0_scalar() if cfg.model == "scalar" else None,
            )
            uppers = [r.value for r in recs if r.kind == "upper" and r.applicable]
            lowers = [r.value for r in recs if r.kind == "lower" and r.applicable]
            upper = _fmt(min(uppers)) if uppers else ""
            lower = _fmt(max(lowers)) if lowers else ""
        rows.append(
            (
                _fmt(e),
                "beyond-horizon" if tau is None else _fmt(tau),
                upper,
                lower,
                fit_family,
                _fmt(fit_param) if fit_family else "",
                source,
            )
        )
    _write_csv(
        os.path.join(out, "report.csv"),
        ["eps", "tau", "bound_upper", "bound_lower", "fit_family", "fit_param", "source"],
        rows,
    )
    with open(os.path.join(out, "provenance.txt"), "w", encoding="utf-8") as fh:
        if consts is None:
            fh.write("bounds: none (insufficient data to fit constants)\n")
        else:
            fh.write(
                f"bounds: provenance={consts.provenance} lam={_fmt(consts.lam)} "
                f"c_big={_fmt(consts.c_big)} lambda_noise={_fmt(consts.lambda_noise)}\n"
            )
        fh.write(f"source: {source}\n")
    return 0


def cmd_emit_tables(out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    header = ["p_range", "noise", "rate", "upper_bound", "source"]
    for name, table in (
        ("convergence_table.csv", CONVERGENCE_TABLE),
        ("mixing_table.csv", MIXING_TABLE),
    ):
        rows = [(r.p_range, r.noise, r.rate, r.upper_bound, r.source) for r in table]
        _write_csv(os.path.join(out_dir, name), header, rows)
    return 0


def cmd_verify_rates(out_dir: str, fast: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    results = experiments.verify_rates(fast=fast)
    rows = []
    failed = False
    for res in results:
        status = "skipped" if res.status == "skipped" else ("pass" if res.passed else "fail")
        if status == "fail":
            failed = True
        detail = "; ".join(f"{k}={v}" for k, v in res.details.items())
        rows.append((res.name, status, detail.replace(",", ";")))
        print(res.line())
    _write_csv(os.path.join(out_dir, "rates_report.csv"), ["row", "status", "detail"], rows)
    return 1 if failed else 0


def cmd_check_disintegration(out_dir: str, n_instances: int, seed: int) -> int:
    os.makedirs(out_dir, exist_ok=True)
    from plmx.experiments import random_disintegration_instance
    from plmx.transport import disintegration_check

    gen = np.random.default_rng(seed)
    rows = []
    any_violation = False
    for i in range(n_instances):
        x_measure, comps, weights = random_disintegration_instance(gen)
        for r in (1.0, 2.0):
            rep = disintegration_check(x_measure, comps, weights, r)
            any_violation |= not rep.holds
            rows.append(
                (
                    str(i),
                    _fmt(r),
                    _fmt(rep.lhs),
                    _fmt(rep.rhs),
                    str(rep.holds).lower(),
                    _fmt(rep.lhs_pow_r),
                    _fmt(rep.rhs_pow_r),
                    str(rep.holds_pow_r).lower(),
                )
            )
    _write_csv(
        os.path.join(out_dir, "disintegration.csv"),
        ["instance", "r", "lhs", "rhs", "holds", "lhs_pow_r", "rhs_pow_r", "holds_pow_r"],
        rows,
    )
    n_viol = sum(1 for row in rows if row[4] == "false")
    print(f"disintegration: {len(rows)} checks, {n_viol} reported violations")
    return 1 if any_violation else 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plmx",
        description="batch runner for the nonlinear-diffusion mixing laboratory",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    with_config = (
        "run-ode", "run-sde", "run-pde", "run-spde", "distance-curve", "mixing-time", "resume",
    )
    for name in with_config:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--eps-grid", default=None)
        p.add_argument("--override", action="append", default=[])
        if name == "resume":
            p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("emit-tables")
    p.add_argument("--out", default=".")
    p = sub.add_parser("verify-rates")
    p.add_argument("--out", default=".")
    p.add_argument("--fast", action="store_true")
    p = sub.add_parser("check-disintegration")
    p.add_argument("--out", default=".")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=2025)
    return ap


def _effective_workers(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("PLMX_WORKERS", "")
    return max(1, int(env)) if env.isdigit() and env else 1


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "emit-tables":
            return cmd_emit_tables(args.out)
        if args.command == "verify-rates":
            return cmd_verify_rates(args.out, args.fast)
        if args.command == "check-disintegration":
            return cmd_check_disintegration(args.out, args.instances, args.seed)

        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"ensemble.seed={args.seed}")
        if args.out is not None:
            overrides.append(f"output.dir={args.out}")
        if args.eps_grid is not None:
            overrides.append(f"schedule.eps_grid={args.eps_grid}")
        cfg = load_config(args.config, overrides)
        workers = _effective_workers(args.workers)
        dispatch = {
            "run-ode": cmd_run_ode,
            "run-sde": cmd_run_sde,
            "run-pde": cmd_run_pde,
            "run-spde": cmd_run_spde,
            "distance-curve": cmd_distance_curve,
            "mixing-time": cmd_mixing_time,
        }
        if args.command == "resume":
            return cmd_resume(cfg, workers, args.checkpoint)
        return dispatch[args.command](cfg, workers)
    except ConfigError as exc:
        print(f"plmx-error kind=config detail={exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"plmx-error kind=config detail={exc}", file=sys.stderr)
        return 2
    except (StepFailureError, FloatingPointError) as exc:
        print(f"plmx-error kind=numerical detail={exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
