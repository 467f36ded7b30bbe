"""Command-line driver: ``omnibounds {train,bounds,sweep,suite,report}``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report as rpt
from .bounds import (EstimationConfig, PerturbationChoice, flatness_bound, neu_isotropic_bound,
                     wang_bound)
from .config import ConfigError, ExperimentConfig, load_config
from .data import load_idx, partition, synth_gaussian_mixture
from .problems import MLP, SoftmaxRegression
from .storage import ContainerError, dumps_json, load_container, plan_to_json, save_container
from .trainer import RunEnsemble, SGDConfig, run_ensemble

SUITES = ("clb", "smooth", "lemmas")
MANIFEST_VERSION = 1


class CellError(RuntimeError):
    pass


def build_problem(cfg: ExperimentConfig, d_in: int, classes: int):
    p = cfg.problem
    if p.model == "logistic":
        return SoftmaxRegression(d_in, classes, p.capped)
    return MLP(d_in, p.width, classes, p.activation, p.capped)


def build_data(cfg: ExperimentConfig):
    d = cfg.data
    total = d.n_train + d.n_test + d.n_val
    if d.kind == "synthetic":
        pool = synth_gaussian_mixture(cfg.seed, total, d.d_in, d.classes, d.separation)
    else:
        pool = load_idx(d.images, d.labels, d.classes)
        if pool.n < total:
            raise ConfigError(f"data.images: {pool.n} samples, config asks for {total}")
        pool = pool.subset(np.arange(total))
    plan = partition(pool, cfg.split.k, d.n_test / total, d.n_val / total, cfg.seed)
    return pool, plan


def _sgd(cfg: ExperimentConfig, lr, batch_size) -> SGDConfig:
    return SGDConfig(lr=lr, batch_size=batch_size, steps=cfg.train.steps,
                     momentum=cfg.train.momentum, seed=cfg.seed)


def _cell_name(cell_id: int) -> str:
    return f"cell_{cell_id:03d}.otrj"


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_train(cfg: ExperimentConfig, out: Path, jobs: int) -> dict:
    pool, plan = build_data(cfg)
    problem = build_problem(cfg, pool.d_in, pool.num_classes)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    def train(cell):
        cell_id, lr, b = cell
        try:
            ens = run_ensemble(problem, pool, plan, _sgd(cfg, lr, b), init_seed=cfg.seed)
        except (ValueError, FloatingPointError) as exc:
            raise CellError(f"cell {cell_id} (lr={lr}, batch_size={b}): {exc}") from exc
        meta = {"cell": cell_id, "lr": lr, "batch_size": b, "seed": cfg.seed,
                "plan": plan_to_json(plan), "w0": ens.w0.tolist()}
        path = cells_dir / _cell_name(cell_id)
        try:
            save_container(path, ens.records, meta)
        except OSError as exc:
            raise CellError(f"cell {cell_id} (lr={lr}, batch_size={b}): {exc}") from exc
        return {"cell": cell_id, "lr": lr, "batch_size": b,
                "container": f"cells/{_cell_name(cell_id)}"}

    cells = _map(train, cfg.grid(), jobs)
    manifest = {"version": MANIFEST_VERSION, "seed": cfg.seed, "config": cfg.as_dict(),
                "cells": cells}
    (out / "manifest.json").write_text(dumps_json(manifest))
    return manifest


def _bound_rows(cfg: ExperimentConfig, ens: RunEnsemble, cell: dict) -> list:
    bs = cfg.bounds
    est = EstimationConfig(probes=bs.probes, rel_tol=bs.rel_tol, max_iter=bs.max_iter,
                           seed=cfg.seed, population_hessian=bs.population_hessian)
    extra = {"lr": cell["lr"], "batch_size": cell["batch_size"], "seed": cfg.seed}
    rows = []
    for name in bs.names:
        if name == "flatness":
            for lam in bs.lambdas:
                choice = PerturbationChoice(bs.h_flat, bs.h_pen, bs.j, lam)
                rows.append(rpt.report_row(flatness_bound(ens, choice, est), **extra))
        elif name == "wang":
            rows.append(rpt.report_row(wang_bound(ens, est), **extra))
        else:
            rows.append(rpt.report_row(neu_isotropic_bound(ens, est), **extra))
    return rows


def _cell_error_rows(cfg, cell, message) -> list:
    extra = {"lr": cell.get("lr"), "batch_size": cell.get("batch_size"), "seed": cfg.seed,
             "experiment": "bounds"}
    rows = []
    for name in cfg.bounds.names:
        lams = cfg.bounds.lambdas if name == "flatness" else (None,)
        for lam in lams:
            rows.append(rpt.error_row(name, message, **extra, **{"lambda": lam}))
    return rows


def cmd_bounds(cfg: ExperimentConfig, manifest_path: Path, out: Path, jobs: int) -> list:
    manifest = json.loads(manifest_path.read_text())
    pool, plan = build_data(cfg)
    problem = build_problem(cfg, pool.d_in, pool.num_classes)
    base = manifest_path.parent

    def evaluate(cell):
        coords = f"cell {cell['cell']} (lr={cell['lr']}, batch_size={cell['batch_size']})"
        try:
            records, meta = load_container(base / cell["container"])
            w0 = np.asarray(meta.get("w0", records[0].w0), dtype=np.float64)
            ens = RunEnsemble(tuple(records), plan, problem, pool, w0,
                              _sgd(cfg, cell["lr"], cell["batch_size"]))
            return _bound_rows(cfg, ens, cell)
        except (ContainerError, ValueError, FloatingPointError) as exc:
            return _cell_error_rows(cfg, cell, f"{coords}: {exc}")

    rows = [r for chunk in _map(evaluate, manifest["cells"], jobs) for r in chunk]
    rpt.write_csv(out / "bounds.csv", rows)
    return rows


def _row(experiment, name, lhs, rhs, ok, trials=None, stderr=None, seed=None) -> dict:
    return {"experiment": experiment, "bound_name": name, "measured_gap": lhs, "total": rhs,
            "trials": trials, "stderr": stderr, "seed": seed, "status": "pass" if ok else "fail"}


def suite_clb(cfg: ExperimentConfig) -> list:
    from .extensions import clb_gd_experiment

    c = cfg.suites.clb
    rec = clb_gd_experiment(c.d, c.n, c.lr, c.steps, c.trials, cfg.seed)
    tol = 4.0
    se_pair = math.hypot(rec.gap_stderr, rec.centered_stderr)
    rows = [
        _row("clb", "gap_le_bound", rec.gap, rec.bound,
             rec.gap <= rec.bound + tol * rec.gap_stderr, rec.trials, rec.gap_stderr),
        _row("clb", "gap_le_centered", rec.gap, rec.centered,
             rec.gap <= rec.centered + tol * se_pair, rec.trials, se_pair),
        _row("clb", "centered_le_bound", rec.centered, rec.bound,
             rec.centered <= rec.bound + tol * rec.centered_stderr, rec.trials,
             rec.centered_stderr),
    ]
    for r in rows:
        r.update({"lr": c.lr, "T": c.steps, "n": c.n, "seed": cfg.seed})
    return rows


def suite_smooth(cfg: ExperimentConfig) -> list:
    from .experiments import line_stability_closed_form, line_stability_estimate
    from .extensions import (optimize_gamma2, separable_excess_risk_optimal,
                             separable_scaling_value, smooth_generalization_bound)

    s = cfg.suites.smooth
    rows = []
    rows.append(_row("smooth", "zero_inputs", smooth_generalization_bound(1.0, 2.0, 0.0, 0.0),
                     0.0, smooth_generalization_bound(1.0, 2.0, 0.0, 0.0) == 0.0))
    g2, best = optimize_gamma2(1.0, 1.0, 0.1)
    grid = min(smooth_generalization_bound(1.0, 1.0 + math.exp(u), 1.0, 0.1)
               for u in np.linspace(-8, 8, 4001))
    rows.append(_row("smooth", "gamma2_optimum", best, grid, best <= grid + 1e-12))
    est = line_stability_estimate(s.n, s.lr, s.steps, s.trials, cfg.seed)
    oracle = line_stability_closed_form(s.n, s.lr, s.steps, s.trials, cfg.seed)
    rows.append(_row("smooth", "stability_closed_form", est.value, oracle,
                     abs(est.value - oracle) <= 1e-8 * max(1.0, abs(oracle)), s.trials,
                     est.stderr, cfg.seed))
    scaled = []
    for n in (100, 1000, 10000):
        v = separable_scaling_value(1.0, n, 1.0)
        _, closed = separable_excess_risk_optimal(1.0, n, 1.0)
        scaled.append(v * n)
        rows.append(_row("smooth", f"separable_n{n}", v, closed,
                         abs(v - closed) <= 0.01 * closed))
    spread = max(scaled) / min(scaled) - 1.0
    rows.append(_row("smooth", "separable_n_scaling", spread, 0.01, spread <= 0.01))
    return rows


def suite_lemmas(cfg: ExperimentConfig) -> list:
    from .lemmas import run_lemma_suite

    rows = []
    for res in run_lemma_suite(cfg.suites.lemmas.m, cfg.seed):
        lhs = res.get("lhs", res.get("mi_exact"))
        rhs = res.get("rhs", res.get("variance_bound"))
        mc = res["check"] in ("moments", "center_distance", "convex")
        rows.append(_row("lemma", f"{res['check']}:{res['family']}", lhs, rhs, res["pass"],
                         cfg.suites.lemmas.m if mc else None, res.get("stderr"), cfg.seed))
    return rows


SUITE_FUNCS = {"clb": suite_clb, "smooth": suite_smooth, "lemmas": suite_lemmas}


def cmd_suite(cfg: ExperimentConfig, name: str, out: Path) -> list:
    rows = SUITE_FUNCS[name](cfg)
    rpt.write_csv(out / f"suite_{name}.csv", rows)
    return [r["bound_name"] for r in rows if r["status"] != "pass"]


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def cmd_report(paths, plot: Path | None) -> int:
    rows = []
    for p in paths:
        rows.extend(rpt.read_csv(p))
    header = f"{'experiment':10s} {'bound':28s} {'lambda':>8s} {'lr':>8s} {'b':>5s} " \
             f"{'total':>12s} {'gap':>12s} status"
    print(header)
    for r in rows:
        print(f"{r['experiment'] or '':10s} {r['bound_name']:28.28s} {_fmt(r['lambda']):>8s} "
              f"{_fmt(r['lr']):>8s} {_fmt(r['batch_size']):>5s} {_fmt(r['total']):>12s} "
              f"{_fmt(r['measured_gap']):>12s} {r['status'] or ''}"
              + (f"  {r['error']}" if r["error"] else ""))
    if plot is not None:
        rpt.plot_gap_vs_bound(rows, plot)
    return 0


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults if omitted)")
    common.add_argument("--out", type=Path, help="output directory (overrides config and env)")
    common.add_argument("--jobs", type=int, default=None, help="concurrent grid cells")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--plot", action="store_true", help="also write an SVG chart")

    parser = argparse.ArgumentParser(prog="omnibounds", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one ensemble per grid cell")
    b = sub.add_parser("bounds", parents=[common], help="estimate bounds from a manifest")
    b.add_argument("--manifest", type=Path, help="defaults to <out>/manifest.json")
    sub.add_parser("sweep", parents=[common], help="train then estimate bounds")
    s = sub.add_parser("suite", parents=[common], help="run a verification battery")
    s.add_argument("name", choices=SUITES)
    r = sub.add_parser("report", parents=[common], help="summarize CSV reports")
    r.add_argument("csv", nargs="*", type=Path)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out if args.out is not None else Path(cfg.output)
    jobs = args.jobs if args.jobs is not None else cfg.threads
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "train":
            m = cmd_train(cfg, out, jobs)
            print(f"trained {len(m['cells'])} cells -> {out / 'manifest.json'}")
        elif args.command in ("bounds", "sweep"):
            if args.command == "sweep":
                cmd_train(cfg, out, jobs)
            manifest = getattr(args, "manifest", None) or out / "manifest.json"
            rows = cmd_bounds(cfg, manifest, out, jobs)
            bad = [r for r in rows if r.get("status") == "error"]
            print(f"{len(rows)} rows -> {out / 'bounds.csv'}"
                  + (f" ({len(bad)} errored)" if bad else ""))
            for r in bad:
                print(f"error: {r['bound_name']}: {r['error']}", file=sys.stderr)
            if args.plot:
                rpt.plot_gap_vs_bound(rows, out / "bounds.svg")
        elif args.command == "suite":
            failed = cmd_suite(cfg, args.name, out)
            if failed:
                print(f"suite {args.name} FAILED: {', '.join(failed)}", file=sys.stderr)
                return 1
            print(f"suite {args.name} passed -> {out / f'suite_{args.name}.csv'}")
        else:
            paths = args.csv or [out / "bounds.csv"]
            return cmd_report(paths, out / "report.svg" if args.plot else None)
    except (ConfigError, CellError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
