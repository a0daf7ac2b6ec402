"""Command-line harness: ``prnn {gen,train,grid,eval,drive,bench}``.

Every subcommand reads the same YAML config (``--config``); ``--seed`` and
``--out`` override the corresponding top-level keys. Exit status is 0 on
success, 1 for user errors (bad config, missing inputs) and 2 for runtime
faults (diverged training, solver or driver).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .config import ConfigError, ExperimentConfig, load_config
from .constitutive import ReturnMapDiverged
from .experiments import DriverDiverged, bench, drive, evaluate, label_curves
from .microfe import PathFailed, build_rve
from .network import PrnnConfig, init_params, predict
from .pathgen import LoadPath, make_dataset
from .train import TrainingFault, TrainSpec, grid_search, summarize_grid, train

__all__ = ["main", "build_parser"]

log = logging.getLogger("prnn")

EXIT_OK, EXIT_USER, EXIT_FAULT = 0, 1, 2


class UserError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _rve(cfg: ExperimentConfig):
    r = cfg.section("rve")
    return build_rve(int(r["n_fibers"]), float(r["vf"]), int(r["n_div"]), int(r["seed"]),
                     min_gap=float(r["min_gap"]))


def _paths_for(cfg: ExperimentConfig, spec: dict) -> list[LoadPath]:
    seed = int(spec.get("seed", cfg.seed))
    return make_dataset(spec["counts"], seed=seed, split=int(spec.get("split", 0)),
                        params=cfg.curve_params, gp=cfg.gp_spec)


def _data_dir(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.out / "data" / name


def _load_set(cfg: ExperimentConfig, name: str, where: str):
    cfg.dataset_spec(name, where)
    try:
        return pio.load_dataset(_data_dir(cfg, name))
    except FileNotFoundError as exc:
        raise UserError(f"{exc}; run 'prnn gen' first") from exc


def _train_spec(cfg: ExperimentConfig, seed: int, n_points: int | None = None) -> TrainSpec:
    t = cfg.section("train")
    n = int(n_points or cfg.section("network")["n_points"])
    return TrainSpec(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), seed=seed,
                     config=PrnnConfig(n), lr=float(t["lr"]), beta1=float(t["beta1"]),
                     beta2=float(t["beta2"]), eps=float(t["eps"]), log_every=int(t["log_every"]))


def _seeds(cfg: ExperimentConfig, args) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    return [int(s) for s in cfg.section("train")["seeds"]]


def _checkpoints(cfg: ExperimentConfig, args) -> list[Path]:
    if args.checkpoint:
        paths = [Path(p) for p in args.checkpoint]
    else:
        paths = [cfg.out / "train" / f"seed_{s}" / "checkpoint.json" for s in _seeds(cfg, args)]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise UserError(f"checkpoint not found: {', '.join(missing)}")
    return paths


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    names = args.sets or list(cfg.datasets)
    mesh = pbc = None
    for name in names:
        spec = cfg.dataset_spec(name, "--sets")
        paths = _paths_for(cfg, spec)
        header = {"dataset": name, "spec": spec, "paths": cfg.section("paths"),
                  "gp": cfg.section("gp")}
        if spec.get("source", "oracle") == "teacher":
            m = int(spec.get("teacher_points", cfg.section("network")["n_points"]))
            tcfg = PrnnConfig(m)
            teacher = init_params(tcfg, int(spec.get("teacher_seed", 0)))
            curves = [pio.LabeledCurve(p, predict(teacher, tcfg, p), f"{name}_{p.curve_type}_{i:04d}")
                      for i, p in enumerate(paths)]
            failed = []
            header["teacher"] = {"n_points": m, "seed": int(spec.get("teacher_seed", 0))}
            pio.save_checkpoint(_data_dir(cfg, name).parent / f"{name}_teacher.json", teacher, tcfg)
        else:
            if mesh is None:
                mesh, pbc = _rve(cfg)
                _write_json(cfg.out / "data" / "mesh.json", mesh.to_dict())
            curves, failed = label_curves(mesh, pbc, paths, cfg.solver,
                                          workers=int(cfg.raw["workers"]), prefix=f"{name}_")
            header["rve"] = cfg.section("rve")
            header["solver"] = cfg.section("solver")
            pio.write_rows_csv(_data_dir(cfg, name).with_name(f"{name}_solver_log.csv"),
                               [{"name": c.name, **c.info} for c in curves] + failed)
        pio.save_dataset(_data_dir(cfg, name), curves, failed, header)
        log.info("dataset %s: %d curves, %d failed", name, len(curves), len(failed))
        print(f"{name}: {len(curves)} curves written to {_data_dir(cfg, name)}"
              + (f" ({len(failed)} failed)" if failed else ""))
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    set_name = cfg.section("train")["set"]
    data = _load_set(cfg, set_name, "train.set")
    status = EXIT_OK
    for seed in _seeds(cfg, args):
        spec = _train_spec(cfg, seed)
        out = cfg.out / "train" / f"seed_{seed}"
        out.mkdir(parents=True, exist_ok=True)
        try:
            res = train(spec, data)
        except TrainingFault as exc:
            print(f"seed {seed}: training fault: {exc}", file=sys.stderr)
            if exc.params is not None:
                pio.save_checkpoint(out / "checkpoint_fault.json", exc.params, spec.config,
                                    {"epoch": exc.epoch, "error": str(exc)})
            if exc.history:
                pio.write_loss_csv(out / "loss.csv", exc.history)
            status = EXIT_FAULT
            continue
        pio.save_checkpoint(out / "checkpoint.json", res.params, spec.config,
                            {"seed": seed, "epochs": spec.epochs, "final_loss": res.final_loss,
                             "train_set": set_name})
        pio.write_loss_csv(out / "loss.csv", res.loss_history)
        print(f"seed {seed}: final loss {res.final_loss:.6e} -> {out / 'checkpoint.json'}")
    return status


def cmd_grid(cfg: ExperimentConfig, args) -> int:
    g = cfg.section("grid")
    tr = _load_set(cfg, g["train_set"], "grid.train_set")
    va = _load_set(cfg, g["val_set"], "grid.val_set")
    base = _train_spec(cfg, cfg.seed)
    rows = grid_search([int(s) for s in g["sizes"]], int(g["n_seeds"]), tr, va, base,
                       workers=int(cfg.raw["workers"]))
    out = cfg.out / "grid"
    out.mkdir(parents=True, exist_ok=True)
    pio.write_rows_csv(out / "grid.csv", [r.as_dict() for r in rows])
    summary = summarize_grid(rows)
    _write_json(out / "summary.json", {"mean_val_rmse": summary})
    print("size  mean validation RMSE [MPa]")
    for size, v in summary.items():
        print(f"{size:4d}  {v:.4f}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    names = args.sets or cfg.section("eval")["sets"]
    sets = {n: _load_set(cfg, n, "eval.sets") for n in names}
    for ck in _checkpoints(cfg, args):
        params, pcfg, _ = pio.load_checkpoint(ck)
        report = evaluate(params, pcfg, sets)
        out = ck.parent / "eval"
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", report.summary())
        pio.write_rows_csv(out / "curves.csv", report.curve_rows())
        pio.write_rows_csv(out / "steps.csv", report.step_rows())
        for n, s in report.sets.items():
            print(f"{ck}: {n}: mean RMSE {s.rmse:.4f} MPa (best {s.best:.4f}, worst {s.worst:.4f})")
    return EXIT_OK


def _target_path(cfg: ExperimentConfig, args) -> np.ndarray:
    if args.target:
        p = Path(args.target)
        if not p.exists():
            raise UserError(f"target stress file {p} not found")
        return np.loadtxt(p, delimiter=",", ndmin=2)
    d = cfg.section("drive")
    n = np.asarray(d["direction"], dtype=float)
    n = n / np.linalg.norm(n)
    lam = np.linspace(0.0, float(d["peak_stress"]), int(d["n_steps"]) + 1)
    return lam[:, None] * n[None, :]


def cmd_drive(cfg: ExperimentConfig, args) -> int:
    target = _target_path(cfg, args)
    status = EXIT_OK
    for ck in _checkpoints(cfg, args):
        params, pcfg, _ = pio.load_checkpoint(ck)
        doc = {}
        for tangent in ("consistent", "elastic"):
            try:
                res = drive(params, pcfg, target, tangent=tangent)
            except DriverDiverged as exc:
                doc[tangent] = {"error": str(exc), "step": exc.step}
                status = EXIT_FAULT
                continue
            doc[tangent] = {"iterations": res.iterations, "mean_iterations": res.mean_iterations,
                            "residuals": res.residuals, "strains": res.strains.tolist()}
            print(f"{ck}: {tangent} tangent: {res.mean_iterations:.2f} iterations/step")
        _write_json(ck.parent / "drive.json", doc)
    return status


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    b = cfg.section("bench")
    spec = cfg.dataset_spec(b["set"], "bench.set")
    paths = _paths_for(cfg, spec)
    idx = int(b["index"])
    if not 0 <= idx < len(paths):
        raise UserError(f"bench.index {idx} outside dataset {b['set']!r}")
    mesh, pbc = _rve(cfg)
    cks = _checkpoints(cfg, args) if (args.checkpoint or args.seed is not None) else []
    if cks:
        params, pcfg, _ = pio.load_checkpoint(cks[0])
    else:
        pcfg = PrnnConfig(int(cfg.section("network")["n_points"]))
        params = init_params(pcfg, cfg.seed)
    report = bench(params, pcfg, mesh, pbc, paths[idx], cfg.solver)
    _write_json(cfg.out / "bench.json", report)
    print(f"PRNN {report['prnn_seconds_per_step'] * 1e6:.1f} us/step, oracle "
          f"{report['oracle_seconds_per_step'] * 1e3:.1f} ms/step ({report['n_elements']} elements), "
          f"speedup {report['speedup']:.0f}x")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "grid": cmd_grid, "eval": cmd_eval,
            "drive": cmd_drive, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the seed (train: single seed)")
        p.add_argument("--out", help="override the output directory")
        if name in ("gen", "eval"):
            p.add_argument("--sets", nargs="+", help="restrict to these datasets")
        if name in ("eval", "drive", "bench"):
            p.add_argument("--checkpoint", nargs="+", help="checkpoint file(s)")
        if name == "drive":
            p.add_argument("--target", help="CSV of target stresses, one row per step")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.out:
        overrides["out"] = args.out
    if args.seed is not None and args.command != "train":
        overrides["seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UserError, pio.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (TrainingFault, PathFailed, DriverDiverged, ReturnMapDiverged) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
