"""Command line entry point: ``levymv run <config> [--threads K] [--out DIR] [--preset P]``.

Exit status: 0 success, 2 invalid configuration, 3 too many blow-ups,
4 an acceptance threshold was missed.  ``LEVYMV_OUT`` overrides the output
directory when ``--out`` is not given.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .chaos_lab import (
    ExperimentPlan,
    nonuniqueness_demo,
    run_poc_experiment,
    run_truncation_study,
    truncated_moment_curve,
)
from .config import ConfigError, RunConfig, parse_config
from .exceptions import BlowUpError, ConvergenceError, LevyMVError
from .levy_noise import TimeGrid, validate_noise
from .mean_field_engine import simulate_particle_system
from .picard_solver import PicardConfig, solve_fixed_point
from .plotting import loglog_svg, rate_report_svg

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_THRESHOLD = 0, 2, 3, 4
OUT_ENV = "LEVYMV_OUT"

log = logging.getLogger("levymv")


def build_id() -> str:
    """``git describe`` of the source tree, falling back to the package version."""
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Outputs:
    """Writes result files and remembers their hashes for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)
        self.files: list[dict] = []

    def write(self, name: str, text: str) -> Path:
        data = text.encode("utf-8")
        path = self.root / name
        path.write_bytes(data)
        self.files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        return self.write(name, buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def _plan(cfg: RunConfig) -> ExperimentPlan:
    model = cfg.model()
    p = cfg.sections["plan"]
    return ExperimentPlan(
        name=Path(cfg.source).stem if cfg.source else "poc",
        coeffs=cfg.coefficients(model.dim), model=model, xi_law=cfg.initial(model.dim), grid=cfg.grid(),
        n_grid=tuple(int(n) for n in p["n_grid"]), replications=int(p["replications"]), seed=cfg.seed,
        law=p["law"], index=float(p["index"]), limit=p["limit"], picard_M=int(p["picard_particles"]),
        reference_factor=int(p["reference_factor"]), threads=cfg.threads, tolerance=float(p["tolerance"]),
        compute_e2=bool(p["compute_e2"]),
    )


def run_poc(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    plan = _plan(cfg)
    report = run_poc_experiment(plan)
    out.write("rate.csv", report.to_csv())
    out.write_json("rate.json", report.to_dict())
    if report.e1 and max(report.e1) > 0:
        out.write("rate.svg", rate_report_svg(report))
    paths = simulate_particle_system(plan.n_grid[0], plan.coeffs, plan.model, plan.grid, plan.xi_law, cfg.seed)
    out.write_csv("trajectory_summary.csv",
                  ["t"] + [f"mean_{j}" for j in range(plan.dim)] + ["M_beta", "running_sup"],
                  paths.summary_rows(1.0))
    checks = {
        "exponent_ok": report.exponent_ok,
        "coupling_violations": report.coupling_violations,
        "monotone_decay": report.monotone_decay(),
        "blowup_share": report.blowup_share,
    }
    if report.blowup_failed:
        return EXIT_BLOWUP, checks
    if not report.exponent_ok or report.coupling_violations:
        return EXIT_THRESHOLD, checks
    return EXIT_OK, checks


def run_truncation(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    model = cfg.model()
    t = cfg.sections["truncation"]
    plan = ExperimentPlan(
        name=Path(cfg.source).stem if cfg.source else "truncation",
        coeffs=cfg.coefficients(model.dim), model=model, xi_law=cfg.initial(model.dim), grid=cfg.grid(),
        # the study runs at the largest N only; the grid below just satisfies the plan contract
        n_grid=tuple(int(t["particles"]) * 2**k for k in (-3, -2, -1, 0)),
        replications=int(t["replications"]), seed=cfg.seed,
        law="thm3", index=getattr(model, "alpha", 1.5), threads=cfg.threads,
    )
    levels = [math.inf if x in (".inf", "inf") else float(x) for x in t["levels"]]
    report = run_truncation_study(plan, levels, n_particles=int(t["particles"]), tolerance=float(t["tolerance"]))
    out.write("truncation.csv", report.to_csv())
    out.write_json("truncation.json", report.to_dict())
    if report.fit is not None:
        out.write("truncation.svg", rate_report_svg(report))
    checks = {"slope_ok": report.exponent_ok if math.isfinite(report.target) else None,
              "blowup_share": report.blowup_share}
    status = EXIT_OK
    if report.blowup_failed:
        status = EXIT_BLOWUP
    elif checks["slope_ok"] is False:
        status = EXIT_THRESHOLD
    mc = cfg.sections.get("moment_curve")
    if mc:
        curve = truncated_moment_curve(
            float(mc["alpha"]), mc["levels"], TimeGrid.uniform(float(mc["horizon"]), int(mc["steps"])),
            seed=cfg.seed, samples=int(mc["samples"]), threads=cfg.threads,
        )
        out.write_csv("moment_curve.csv", ["N", "estimate", "se"],
                      zip(curve.levels, curve.estimates, curve.std_errors))
        out.write_json("moment_curve.json", curve.to_dict())
        out.write("moment_curve.svg", loglog_svg(
            curve.levels, curve.estimates, curve.std_errors, title="truncated moment", x_label="N",
            y_label="E|Z_N,T|^alpha"))
        checks["moment_r_squared"] = curve.r_squared
        if curve.r_squared < float(mc["min_r_squared"]) and status == EXIT_OK:
            status = EXIT_THRESHOLD
    return status, checks


def run_picard(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    model = cfg.model()
    p = cfg.sections["picard"]
    pc = PicardConfig(particles_M=int(p["particles"]), max_iters=int(p["max_iters"]), tol=p["tol"],
                      beta=float(p["beta"]), seed=cfg.seed, common_noise=bool(p["common_noise"]))
    grid = cfg.grid()
    try:
        flow, report = solve_fixed_point(cfg.coefficients(model.dim), model, grid, pc, cfg.initial(model.dim))
    except ConvergenceError as exc:
        out.write_json("contraction.json", exc.report.to_dict())
        return EXIT_THRESHOLD, {"converged": False}
    out.write_json("contraction.json", report.to_dict())
    means = flow.means()
    out.write_csv("flow_means.csv", ["t"] + [f"mean_{j}" for j in range(means.shape[1])],
                  ([float(t), *map(float, m)] for t, m in zip(grid.nodes, means)))
    checks = {"converged": True, "contractive_above_floor": report.contractive_above_floor,
              "consistent": report.consistent}
    ok = report.contractive_above_floor and report.consistent is not False
    return (EXIT_OK if ok else EXIT_THRESHOLD), checks


def run_nonuniqueness(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    n = cfg.sections["nonuniqueness"]
    res = nonuniqueness_demo(float(n["beta"]), cfg.grid(), perturbation=float(n["perturbation"]),
                             particles=int(n["particles"]), seed=cfg.seed)
    out.write_csv("trajectories.csv", ["t", "zero_branch", "positive_branch"], res.rows())
    summary = res.to_dict()
    summary["endpoint_error"] = abs(summary["positive_endpoint"] - summary["closed_form_endpoint"])
    summary["endpoint_ok"] = summary["endpoint_error"] <= float(n["endpoint_tolerance"])
    out.write_json("residuals.json", summary)
    ok = res.passed and summary["endpoint_ok"]
    return (EXIT_OK if ok else EXIT_THRESHOLD), {"passed": ok}


def run_validate(cfg: RunConfig, out: Outputs) -> tuple[int, dict]:
    v = cfg.sections["validate"]
    res = validate_noise(cfg.model(), cfg.seed, horizon=float(v["horizon"]), n_paths=int(v["n_paths"]),
                         cf_samples=int(v["cf_samples"]), cf_alpha=float(v["cf_alpha"]),
                         significance=float(v["significance"]))
    out.write_json("noise_validation.json", res)
    return (EXIT_OK if res["passed"] else EXIT_THRESHOLD), {"passed": res["passed"]}


RUNNERS = {
    "poc": run_poc,
    "truncation": run_truncation,
    "picard": run_picard,
    "nonuniqueness": run_nonuniqueness,
    "noise-validate": run_validate,
}


def output_dir(cfg: RunConfig, cli_out: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if cfg.output:
        return Path(cfg.output)
    stem = Path(cfg.source).stem if cfg.source else cfg.kind
    return Path("results") / stem


def run(cfg: RunConfig, out_dir: Path) -> int:
    """Execute a validated configuration and write its artifacts and manifest."""
    start = time.perf_counter()
    out = Outputs(out_dir)
    try:
        status, checks = RUNNERS[cfg.kind](cfg, out)
    except BlowUpError as exc:
        status, checks = EXIT_BLOWUP, {"blowup": str(exc)}
    except LevyMVError as exc:
        status, checks = EXIT_CONFIG, {"error": str(exc)}
    manifest = {
        "build": build_id(),
        "config_source": cfg.source,
        "config": cfg.resolved,
        "elapsed_seconds": round(time.perf_counter() - start, 3),
        "exit_status": status,
        "checks": checks,
        "files": list(out.files),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
    )
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="levymv", description="Lévy-driven mean-field experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment configuration")
    p_run.add_argument("config", help="path to a YAML experiment file")
    p_run.add_argument("--threads", type=int, default=None, help="thread budget (overrides the config)")
    p_run.add_argument("--out", default=None, help=f"output directory (else ${OUT_ENV}, else the config)")
    p_run.add_argument("--preset", choices=("quick", "full"), default=None)
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        cfg = parse_config(args.config, preset=args.preset)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None:
        if args.threads < 1:
            print("invalid configuration:\n  - --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        cfg.threads = args.threads
    out_dir = output_dir(cfg, args.out)
    status = run(cfg, out_dir)
    log.info("wrote %s (exit %d)", out_dir, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
