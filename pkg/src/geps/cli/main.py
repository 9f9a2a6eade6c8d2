"""``geps`` command line: generate, train, adapt, evaluate, ablate-*, plot."""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from geps.cli import plots, runconfig
from geps.cli.runconfig import ConfigError
from geps.condlayers import CTX_PREFIX
from geps.datagen import dataset as dsmod
from geps.diffcore import container
from geps.dynamics import physics
from geps.dynamics.hybrid import coefficient_table
from geps.dynamics.integrate import IntegrationDivergedError
from geps.meta import ablation, engine
from geps.meta.config import ADAPT_MODES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_SHAPE = 4
EXIT_VERSION = 5
EXIT_INVARIANT = 6
EXIT_DIVERGED = 7
EXIT_EXISTS = 8
EXIT_CONFIG = 9
EXIT_CORRUPT = 10

CSV_COLUMNS = ("run_id", "phase", "env_id", "horizon", "metric", "value", "step")
CHECKPOINT = "checkpoint.gck"
CONFIG = "config.toml"


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


class ShapeMismatchError(ValueError):
    pass


class InvariantFailure(AssertionError):
    pass


# helpers -------------------------------------------------------------------------

def output_root() -> Path:
    return Path(os.environ.get("GEPS_OUTPUT_ROOT", "."))


def resolve_out(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def resolve_in(path: str) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    alt = output_root() / p
    return alt if alt.exists() else p


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {path}")
    return path


def _prepare_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(EXIT_EXISTS, f"{path} exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt_value(r.get(c, "")) for c in CSV_COLUMNS])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _load_dataset(path: str):
    return dsmod.read_dataset(_require(resolve_in(path), "dataset"))


def _load_run(run: str):
    d = resolve_in(run)
    ck = d / CHECKPOINT
    if not ck.exists():
        raise CliError(EXIT_MISSING, f"no checkpoint in {d}; run 'geps train' first")
    try:
        solver, params, meta = engine.load_checkpoint(ck)
    except engine.NotACheckpointError as exc:
        raise CliError(EXIT_SHAPE, str(exc))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, container.ContainerError):
            raise
        raise CliError(EXIT_SHAPE, str(exc))
    return d, solver, params, meta


def _check_data(solver, ds) -> None:
    if ds.kind != solver.kind:
        raise ShapeMismatchError(f"dataset holds {ds.kind!r} data, model is for {solver.kind!r}")
    C = physics.CHANNELS[ds.kind]
    if ds.state_shape[0] != C:
        raise ShapeMismatchError(f"dataset has {ds.state_shape[0]} channels, expected {C}")


def _config(args, kind: str):
    flat = runconfig.load_flat(_require(resolve_in(args.config), "config")) if args.config else {}
    flat = runconfig.apply_overrides(flat, args.set)
    return runconfig.resolve(flat, kind)


def _contexts_csv(path: Path, params) -> None:
    names = params.names(CTX_PREFIX)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not names:
            w.writerow(["env_id"])
            return
        r = params[names[0]].size
        w.writerow(["env_id"] + [f"c{i}" for i in range(r)])
        for n in names:
            w.writerow([n[len(CTX_PREFIX):]] + [repr(float(x)) for x in params[n]])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# commands -----------------------------------------------------------------------

POOL_SPLIT = {("train", "train"): "train", ("eval", "train"): "eval",
              ("adapt", "adapt"): "adapt", ("eval", "adapt"): "adapt_eval"}


def cmd_generate(args) -> int:
    out = resolve_out(args.out)
    if out.exists() and not args.force:
        raise CliError(EXIT_EXISTS, f"{out} exists; pass --force to overwrite")
    env_pool = args.env_pool or ("adapt" if args.pool == "adapt" else "train")
    split = POOL_SPLIT.get((args.pool, env_pool))
    if split is None:
        raise CliError(EXIT_USAGE, f"--pool {args.pool} cannot draw from --env-pool {env_pool}")
    grid = {}
    for item in args.grid or []:
        k, _, v = item.partition("=")
        if k not in dsmod.DEFAULT_GRID[args.kind]:
            raise CliError(EXIT_CONFIG, f"unknown grid key {k!r} for {args.kind}")
        grid[k] = runconfig.parse_value(v)
    ds = dsmod.generate_dataset(args.kind, split, args.envs, args.trajs, args.seed,
                                env_pool=env_pool, mode=args.mode, grid=grid, jobs=args.jobs)
    out.parent.mkdir(parents=True, exist_ok=True)
    dsmod.write_dataset(ds, out)
    with open(out.parent / "MANIFEST.tsv", "a") as fh:
        fh.write("\t".join([out.name, args.kind, split, str(args.envs), str(args.trajs),
                            str(args.seed), _sha256(out)]) + "\n")
    print(f"wrote {out}: {ds.n_envs} environments x {ds.n_trajs} trajectories, "
          f"{ds.t.size} frames")
    return EXIT_OK


def _emit_train_outputs(run_dir: Path, run_id: str, phase: str, rows, plot: bool,
                        curves: dict, title: str) -> None:
    write_csv(run_dir / "metrics.csv", rows)
    if plot and curves:
        plots.write_svg(run_dir / "loss.svg", plots.line_plot(curves, title))


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    cfg, run = _config(args, ds.kind)
    run_dir = _prepare_dir(resolve_out(args.out), args.force)
    runconfig.write(run_dir / CONFIG, cfg, run)
    grid = engine.physics_grid(cfg.kind, ds.grid, ds.envs)
    solver = engine.build_solver(cfg, grid)
    _check_data(solver, ds)
    params = engine.init_params(solver, ds.env_ids)
    t0 = time.perf_counter()
    res = engine.train(solver, params, ds, cfg)
    elapsed = time.perf_counter() - t0
    run_id = run_dir.name
    extra = {"train_data_sha256": _sha256(resolve_in(args.data))}
    if solver.hybrid is not None:
        extra["coefficients"] = coefficient_table(
            solver.hybrid, res.params, ds.env_ids,
            {e: res.params[f"{CTX_PREFIX}{e}"] for e in ds.env_ids} if cfg.conditioned else None)
    engine.save_checkpoint(run_dir / CHECKPOINT, solver, res.params, ds.env_ids, "train", extra)
    _contexts_csv(run_dir / "contexts.csv", res.params)
    rows = [{"run_id": run_id, "phase": "train", "env_id": "ALL", "horizon": "",
             "metric": "loss", "value": r["loss"], "step": r["epoch"]} for r in res.log]
    rows += [{"run_id": run_id, "phase": "train", "env_id": "ALL", "horizon": "",
              "metric": "lr", "value": r["lr"], "step": r["epoch"]} for r in res.log]
    curves = {"train loss": ([r["epoch"] for r in res.log], [r["loss"] for r in res.log])}
    _emit_train_outputs(run_dir, run_id, "train", rows, run["output.plots"], curves,
                        f"training loss ({cfg.kind}, {cfg.conditioning})")
    (run_dir / "timing.log").write_text(f"train_seconds {elapsed:.3f}\n")
    print(f"trained {cfg.epochs} epochs; best loss {res.best_loss:.6g}; run dir {run_dir}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    src, solver, params, meta = _load_run(args.run)
    ds = _load_dataset(args.data)
    _check_data(solver, ds)
    cfg = solver.config
    if args.config or args.set:
        flat = runconfig.load_flat(resolve_in(args.config)) if args.config else {}
        flat = {k: v for k, v in runconfig.apply_overrides(flat, args.set).items()
                if k.startswith("adapt.") or k == "output.plots"}
        base = {k: cfg.to_dict()[f] for k, f in runconfig.KEYMAP.items()}
        base.update({k: v for k, v in flat.items() if k in runconfig.KEYMAP})
        cfg, _ = runconfig.resolve(base, ds.kind)
        solver.config = cfg
    mode = args.mode or cfg.adapt_mode
    run_dir = _prepare_dir(resolve_out(args.out), args.force)
    runconfig.write(run_dir / CONFIG, cfg.with_(adapt_mode=mode), {"output.plots": True})
    t0 = time.perf_counter()
    res = engine.adapt(solver, params, ds, cfg, mode=mode, n_traj=args.n_traj)
    elapsed = time.perf_counter() - t0
    engine.save_checkpoint(run_dir / CHECKPOINT, solver, res.params,
                           list(meta["env_ids"]) + [e for e in ds.env_ids if e not in meta["env_ids"]],
                           "adapt", {"parent_checksum": params.checksum(), "adapt_mode": mode})
    _contexts_csv(run_dir / "contexts.csv", res.params)
    run_id = run_dir.name
    rows, curves = [], {}
    for e, log in res.logs.items():
        rows += [{"run_id": run_id, "phase": "adapt", "env_id": e, "horizon": "",
                  "metric": "loss", "value": r["loss"], "step": r["step"]} for r in log]
        rows.append({"run_id": run_id, "phase": "adapt", "env_id": e, "horizon": "",
                     "metric": "plateau_step", "value": res.plateau_steps[e], "step": ""})
        curves[e] = ([r["step"] for r in log], [r["loss"] for r in log])
    _emit_train_outputs(run_dir, run_id, "adapt", rows, True, curves, f"adaptation loss ({mode})")
    (run_dir / "timing.log").write_text(f"adapt_seconds {elapsed:.3f}\n")
    print(f"adapted {len(ds.env_ids)} environments ({mode}); run dir {run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir, solver, params, meta = _load_run(args.run)
    ds = _load_dataset(args.data)
    _check_data(solver, ds)
    horizons = [h.strip() for h in args.horizons.split(",") if h.strip()]
    for h in horizons:
        if h not in engine.HORIZONS:
            raise CliError(EXIT_USAGE, f"unknown horizon {h!r}")
    try:
        reports = engine.evaluate(solver, params, ds, horizons)
    except engine.MissingContextError as exc:
        raise CliError(EXIT_SHAPE, f"{exc}; adapt the model to these environments first")
    run_id = run_dir.name
    phase = f"eval-{ds.split}"
    rows = []
    for h in horizons:
        rows += reports[h].rows(run_id, phase)
    write_csv(run_dir / f"eval_{ds.split}.csv", rows)
    first = reports[horizons[0]]
    plots.write_svg(run_dir / f"eval_{ds.split}.svg",
                    plots.bar_plot(list(first.per_env), list(first.per_env.values()),
                                   f"relative MSE per environment ({ds.split}, {first.horizon})"))
    checks = []
    ok = True
    if "in" in reports and "out" in reports:
        a_in, a_out = reports["in"].aggregate, reports["out"].aggregate
        passed = bool(a_out >= a_in)
        ok &= passed
        checks.append({"run_id": run_id, "phase": phase, "env_id": "ALL", "horizon": "out-vs-in",
                       "metric": "out_range_ge_in_range", "value": int(passed), "step": ""})
    agg_ok = all(abs(r.aggregate - float(np.mean(list(r.per_env.values())))) <= 1e-12
                 or not np.isfinite(r.aggregate) for r in reports.values())
    ok &= agg_ok
    checks.append({"run_id": run_id, "phase": phase, "env_id": "ALL", "horizon": "",
                   "metric": "aggregate_is_env_mean", "value": int(agg_ok), "step": ""})
    write_csv(run_dir / "checks.csv", checks)
    for h in horizons:
        print(f"{ds.split} {h}-range relative MSE: {reports[h].aggregate:.6g}")
    if not ok:
        raise CliError(EXIT_INVARIANT, "evaluation invariant failed; see checks.csv")
    return EXIT_OK


def _ablate(args, which: str) -> int:
    ds = _load_dataset(args.data)
    cfg, run = _config(args, ds.kind)
    eval_ds = _load_dataset(args.eval) if args.eval else None
    out = _prepare_dir(resolve_out(args.out), args.force)
    runconfig.write(out / CONFIG, cfg, run)
    if which == "init":
        inits = args.inits.split(",") if args.inits else list(ablation.INIT_SCHEMES)
        rows = ablation.ablate_init(ds, cfg, inits, eval_ds, jobs=args.jobs)
        key = "init"
    else:
        dims = [int(x) for x in args.dims.split(",")] if args.dims else list(ablation.CODE_DIMS)
        rows = ablation.ablate_code_dim(ds, cfg, dims, eval_ds, jobs=args.jobs)
        key = "r"
    run_id = out.name
    csv_rows, curves = [], {}
    for row in rows:
        label = str(row[key])
        for metric in ("final_loss", "relative_mse", "n_params", "closed_form", "n_context"):
            csv_rows.append({"run_id": run_id, "phase": f"ablate-{which}", "env_id": label,
                             "horizon": "in", "metric": metric, "value": row[metric], "step": ""})
        csv_rows += [{"run_id": run_id, "phase": f"ablate-{which}", "env_id": label,
                      "horizon": "", "metric": "loss", "value": v, "step": i}
                     for i, v in enumerate(row["loss_curve"])]
        curves[f"{key}={label}"] = (list(range(len(row["loss_curve"]))), row["loss_curve"])
    write_csv(out / "metrics.csv", csv_rows)
    (out / "timing.log").write_text(
        "".join(f"{key}={row[key]} seconds {row['seconds']:.3f} status {row['status']}\n"
                for row in rows))
    if run["output.plots"]:
        plots.write_svg(out / "loss.svg", plots.line_plot(curves, f"ablation over {key}"))
        plots.write_svg(out / "relative_mse.svg", plots.bar_plot(
            [str(r[key]) for r in rows], [r["relative_mse"] for r in rows],
            f"relative MSE by {key}"))
    for row in rows:
        print(f"{key}={row[key]}: relative MSE {row['relative_mse']:.6g}, "
              f"shared params {row['n_params']}, {row['status']}")
    if which == "codedim" and any(r["n_params"] != r["closed_form"] for r in rows):
        raise CliError(EXIT_INVARIANT, "parameter count disagrees with the closed form")
    return EXIT_OK


def cmd_plot(args) -> int:
    run_dir = _require(resolve_in(args.run), "run directory")
    made = 0
    metrics = run_dir / "metrics.csv"
    if metrics.exists():
        rows = [r for r in read_csv(metrics) if r["metric"] == "loss"]
        if rows:
            curves: dict = {}
            for r in rows:
                xs, ys = curves.setdefault(f"{r['phase']} {r['env_id']}", ([], []))
                xs.append(float(r["step"]))
                ys.append(float(r["value"]))
            plots.write_svg(run_dir / "loss.svg", plots.line_plot(curves, "loss curves"))
            made += 1
        else:
            print(f"warning: {metrics} has no loss rows; skipped", file=sys.stderr)
    for path in sorted(run_dir.glob("eval_*.csv")):
        rows = [r for r in read_csv(path) if r["env_id"] != "ALL"]
        if not rows:
            print(f"warning: {path} is empty; skipped", file=sys.stderr)
            continue
        h0 = rows[0]["horizon"]
        rows = [r for r in rows if r["horizon"] == h0]
        plots.write_svg(path.with_suffix(".svg"), plots.bar_plot(
            [r["env_id"] for r in rows], [float(r["value"]) for r in rows],
            f"relative MSE per environment ({path.stem[5:]}, {h0})"))
        made += 1
    print(f"wrote {made} plot(s) in {run_dir}")
    return EXIT_OK


# parser -------------------------------------------------------------------------

def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geps", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("--kind", required=True, choices=list(dsmod.DEFAULT_GRID))
    g.add_argument("--pool", required=True, choices=["train", "adapt", "eval"])
    g.add_argument("--env-pool", choices=["train", "adapt"],
                   help="environments for --pool eval (default train)")
    g.add_argument("--envs", type=positive_int, required=True)
    g.add_argument("--trajs", type=positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", choices=["discrete", "continuous"])
    g.add_argument("--grid", action="append", metavar="KEY=VALUE",
                   help="simulation grid override, e.g. les_points=64")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.add_argument("--jobs", type=positive_int, default=1)
    g.set_defaults(func=cmd_generate)

    def common(p, needs_out=True):
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        if needs_out:
            p.add_argument("--out", required=True)
            p.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train shared weights and contexts")
    t.add_argument("--data", required=True)
    common(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("adapt", help="fit contexts for new environments")
    a.add_argument("--run", required=True, help="trained run directory")
    a.add_argument("--data", required=True)
    a.add_argument("--mode", choices=list(ADAPT_MODES))
    a.add_argument("--n-traj", type=positive_int, default=None)
    common(a)
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("evaluate", help="relative MSE on an evaluation set")
    e.add_argument("--run", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--horizons", default="in,out")
    e.set_defaults(func=cmd_evaluate)

    for name, which in (("ablate-init", "init"), ("ablate-codedim", "codedim")):
        p = sub.add_parser(name, help=f"{which} ablation")
        p.add_argument("--data", required=True)
        p.add_argument("--eval")
        p.add_argument("--jobs", type=positive_int, default=1)
        if which == "init":
            p.add_argument("--inits", help="comma-separated subset of kaiming,xavier,lora,orthogonal")
        else:
            p.add_argument("--dims", help="comma-separated context sizes (default 1,2,4,8,16)")
        common(p)
        p.set_defaults(func=lambda args, w=which: _ablate(args, w))

    pl = sub.add_parser("plot", help="re-render SVGs from a run directory")
    pl.add_argument("--run", required=True)
    pl.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except container.ContainerVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (container.ContainerChecksumError, container.ContainerTruncatedError,
            container.ContainerFormatError) as exc:
        print(f"error: corrupted or foreign file: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (engine.FrozenParameterMutation, InvariantFailure) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (engine.TrainingDivergedError, IntegrationDivergedError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
