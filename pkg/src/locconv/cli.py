"""``locconv`` command line.

Every subcommand writes the resolved arguments as ``config.json`` next to
its outputs; ``--config`` replays such a file (explicit flags still win).
Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, embedding, experiment, gradcheck, models
from .config import RunConfig

log = logging.getLogger("locconv")


# --- subcommands ----------------------------------------------------------------

def _write_config(out: Path, command: str, args: argparse.Namespace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config", "command", "verbose")}
    (out / "config.json").write_text(json.dumps({"command": command, **resolved}, indent=2, sort_keys=True) + "\n")


def cmd_gen_balls(args) -> int:
    out = Path(args.out)
    train, test_all, bounce = data.generate_ball_dataset(args.train, args.test, args.bounce, seed=args.seed,
                                                         smooth=args.smooth)
    entries = {"counts": [args.train, args.test, args.bounce], "seed": args.seed,
               "generator_version": data.GENERATOR_VERSION}
    for stem, ds in (("train", train), ("test_all", test_all), ("test_bounce", bounce)):
        entries[stem] = data.save_dataset(ds, out, stem)
    data.write_metadata(out, entries)
    _write_config(out, "gen-balls", args)
    print(f"wrote {data.dataset_summary(train)}; {data.dataset_summary(test_all)}; "
          f"{data.dataset_summary(bounce)} to {out}")
    return 0


def cmd_gen_windgrid(args) -> int:
    out = Path(args.out)
    ds = data.generate_windgrid(args.W, args.H, args.T, args.bias, seed=args.seed)
    data.write_metadata(out, {"series": data.save_dataset(ds, out, "series"), "seed": args.seed,
                              "generator_version": data.GENERATOR_VERSION})
    _write_config(out, "gen-windgrid", args)
    print(f"wrote {data.dataset_summary(ds)} to {out}")
    return 0


TRAIN_FLAGS = {
    # flag: (RunConfig field, type)
    "task": ("task", str), "models": ("models", str), "W": ("W", int), "H": ("H", int),
    "l": ("l", int), "horizons": ("horizons", str), "epochs": ("epochs", int), "seeds": ("seeds", str),
    "width_scale": ("width_scale", float), "batch_size": ("batch_size", int), "lr": ("lr", float),
    "data_seed": ("data_seed", int), "data_dir": ("data_dir", str), "n_train": ("n_train", int),
    "n_test": ("n_test", int), "n_bounce": ("n_bounce", int), "T": ("T", int),
    "bias_amplitude": ("bias_amplitude", float), "csv_path": ("csv_path", str),
    "hidden_activation": ("hidden_activation", str), "curve_metric": ("curve_metric", str),
}


def _int_list(text: str) -> list:
    return [int(v) for v in str(text).split(",") if v != ""]


def resolve_train_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    for flag, (name, _) in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if name in ("horizons", "seeds"):
            value = _int_list(value)
        elif name == "models":
            value = [m for m in value.split(",") if m]
        changes[name] = value
    if args.out:
        changes["output_dir"] = args.out
    if args.full_scale:
        changes.update(n_train=1600, n_test=500, n_bounce=500, epochs=100, seeds=[0, 1, 2, 3, 4], width_scale=1.0)
    if args.match_params:
        changes["match_params"] = True
    if args.record_wall_time:
        changes["record_wall_time"] = True
    if args.no_normalize:
        changes["normalize"] = False
    cfg = cfg.replace(**changes)
    if cfg.task == "balls" and "l" not in changes and not args.config:
        cfg = cfg.replace(l=data.BALL_INPUT_FRAMES, horizons=[data.BALL_OFFSET])
    return RunConfig.from_dict(cfg.to_dict())


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    result = experiment.run_experiment(cfg)
    for row in result.aggregate:
        print(f"{row['model']:<32} h={row['horizon']} params={row['params']:>7} "
              f"test_rmse={row['test_rmse_mean']:.5f}±{row['test_rmse_std']:.5f} "
              f"test_mae={row['test_mae_mean']:.5f} failed={row['n_failed']}")
    print(f"outputs in {cfg.output_dir}")
    return 0


def cmd_eval(args) -> int:
    rows = experiment.evaluate_run(args.run, args.data_dir)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_csv(out / "eval.csv", rows, ("model", "horizon", "seed", "valid_rmse", "test_rmse",
                                                   "valid_mae", "test_mae"))
    if args.out:
        _write_config(out, "eval", args)
    for r in rows:
        print(f"{r['model']:<32} seed={r['seed']} h={r['horizon']} test_rmse={r['test_rmse']:.5f}")
    return 0


def cmd_embed_grid(args) -> int:
    out = Path(args.out)
    if args.csv:
        names, series = embedding.read_station_csv(args.csv)
    else:
        series, _ = embedding.planted_stations(args.W, args.H, args.W * args.H - args.stations, seed=args.seed)
        names = [f"s{i}" for i in range(len(series))]
    mi = embedding.mi_matrix(series, args.bins)
    best, trace = embedding.optimize_embedding(mi, args.W, args.H, pop=args.pop, p_mut=args.p_mut,
                                               p_cx=args.p_cx, generations=args.generations, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    direct = embedding.PermutationIndividual(np.arange(args.W * args.H), mi.n_stations)
    with open(out / "assignment.csv", "w") as fh:
        for row in best.grid(args.W, args.H):
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    with open(out / "fitness_trace.csv", "w") as fh:
        fh.write("generation,best_fitness\n")
        fh.writelines(f"{g},{v!r}\n" for g, v in enumerate(trace.tolist()))
    with open(out / "mi_matrix.csv", "w") as fh:
        fh.write(",".join(names) + "\n")
        fh.writelines(",".join(repr(float(v)) for v in row) + "\n" for row in mi.values)
    _write_config(out, "embed-grid", args)
    print(f"F(direct) = {embedding.fitness(direct, mi, args.W, args.H):.4f}  "
          f"F(optimized) = {best.fitness:.4f}  ({len(trace) - 1} generations)")
    return 0


def cmd_grad_check(args) -> int:
    results = gradcheck.run_suite(args.instances, args.seed)
    worst = 0.0
    for name, (err, secs) in results.items():
        flag = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:<28} {err:.3e}  {secs:6.2f}s  {flag}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:g})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "grad_check.csv", "w") as fh:
            fh.write("op,max_relative_error\n")
            fh.writelines(f"{k},{v[0]!r}\n" for k, v in results.items())
        _write_config(out, "grad-check", args)
    return 0 if worst < gradcheck.TOLERANCE else 1


def cmd_param_count(args) -> int:
    tag = models.normalize_tag(args.model)
    if args.balls_scale:
        tag = tag if tag in models.BALL_TAGS else "BALLS_" + tag.upper()
        spec = models.ball_spec(models.normalize_tag(tag), args.width_scale)
        W = H = models.BALL_GRID
        T = models.BALL_WINDOW
    else:
        W, H, T = args.W, args.H, args.T
        spec = models.model_spec(tag, W, H, T, args.width_scale, match_params=args.match_params)
    print(models.param_count(spec, W, H, T))
    if args.describe:
        print(models.describe(spec, W, H, T))
    return 0


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locconv", description="Localized convolutional forecasting toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="replay a config.json written by an earlier run")
        sp.set_defaults(func=func)
        return sp

    sp = command("gen-balls", cmd_gen_balls, "generate bouncing-ball datasets")
    sp.add_argument("--train", type=int, default=1600)
    sp.add_argument("--test", type=int, default=500)
    sp.add_argument("--bounce", type=int, default=500)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--smooth", action="store_true", help="anti-aliased disc edges")
    sp.add_argument("--out", default="data/balls")

    sp = command("gen-windgrid", cmd_gen_windgrid, "generate a synthetic localized grid series")
    sp.add_argument("--W", type=int, default=10)
    sp.add_argument("--H", type=int, default=10)
    sp.add_argument("--T", type=int, default=1500)
    sp.add_argument("--bias", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", default="data/windgrid")

    sp = command("train", cmd_train, "train models over several seeds")
    for flag, (_, typ) in TRAIN_FLAGS.items():
        sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ, default=None)
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--full-scale", action="store_true", help="1600/500/500 samples, 100 epochs, 5 seeds")
    sp.add_argument("--match-params", action="store_true", default=None)
    sp.add_argument("--record-wall-time", action="store_true", default=None)
    sp.add_argument("--no-normalize", action="store_true", default=None)

    sp = command("eval", cmd_eval, "re-score stored checkpoints of a run")
    sp.add_argument("--run", default=None, help="directory of a finished train run (required)")
    sp.add_argument("--data-dir", default=None)
    sp.add_argument("--out", default=None)

    sp = command("embed-grid", cmd_embed_grid, "optimize a station-to-grid embedding")
    sp.add_argument("--csv", default=None, help="station series, one column per station")
    sp.add_argument("--W", type=int, default=8)
    sp.add_argument("--H", type=int, default=8)
    sp.add_argument("--stations", type=int, default=57, help="planted stations when no CSV is given")
    sp.add_argument("--pop", type=int, default=300)
    sp.add_argument("--p-mut", type=float, default=0.2)
    sp.add_argument("--p-cx", type=float, default=0.3)
    sp.add_argument("--generations", type=int, default=2000)
    sp.add_argument("--bins", type=int, default=embedding.DEFAULT_BINS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="runs/embedding")

    sp = command("grad-check", cmd_grad_check, "finite-difference gradient suite")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = command("param-count", cmd_param_count, "print a model's trainable parameter count")
    sp.add_argument("--model", default=None, help="model tag (required)")
    sp.add_argument("--balls-scale", action="store_true", help="30x30 frames, 25 inputs, bouncing-ball widths")
    sp.add_argument("--W", type=int, default=10)
    sp.add_argument("--H", type=int, default=10)
    sp.add_argument("--T", type=int, default=12)
    sp.add_argument("--width-scale", type=float, default=1.0)
    sp.add_argument("--match-params", action="store_true")
    sp.add_argument("--describe", action="store_true", help="also print the layer sequence")
    return p


REQUIRED = {"eval": ("run",), "param-count": ("model",)}


def _apply_config_file(parser, argv, args):
    """Reparse with a stored config as defaults so explicit flags override it."""
    stored = json.loads(Path(args.config).read_text())
    if args.command == "train":
        return args  # RunConfig files are resolved by the train command itself
    if stored.get("command", args.command) != args.command:
        raise ValueError(f"{args.config} belongs to '{stored['command']}', not '{args.command}'")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(stored) - known - {"command"}
    if unknown:
        raise ValueError(f"{args.config}: unknown keys {sorted(unknown)}")
    sub.set_defaults(**{k: v for k, v in stored.items() if k != "command"})
    return parser.parse_args(argv)


def _failed(command: str, err: Exception) -> int:
    print(f"locconv {command}: error: {err}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config_file(parser, argv, args)
    except (OSError, ValueError, KeyError) as err:
        return _failed(args.command, err)
    # checked after any replay so that a stored config can supply them
    missing = [d for d in REQUIRED.get(args.command, ()) if getattr(args, d) is None]
    if missing:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.error(f"the following arguments are required: {', '.join('--' + d for d in missing)}")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as err:
        return _failed(args.command, err)


if __name__ == "__main__":
    sys.exit(main())
