"""Command-line interface.

Subcommands::

    adakde gen-tasks  --config train.yaml --out tasks/
    adakde pretrain   --config train.yaml --out model.nnkd [--tasks tasks/]
    adakde recommend  --checkpoint model.nnkd --sample x.csv --out factors.csv
    adakde finetune   --checkpoint model.nnkd --sample x.csv --out factors.csv
    adakde eval       --config experiment.yaml --out results/ [--methods ...] [--jobs N]
    adakde report     --raw results/runs.csv --out results/

Sample files are headerless CSV with one point per row.  Factor files hold
one row per sample point: the row-major packed lower triangle of ``L_i``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure
(every cell failed, for ``eval``), 3 partial failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import AdakdeError, ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("adakde")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _read_matrix(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: not a numeric CSV matrix ({exc})") from exc
    return data


def _write_matrix(path, rows: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, delimiter=",", fmt="%.17g")


def _packed_rows(L: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(L.shape[-1])
    return L[:, rows, cols]


def _unpack_rows(P: np.ndarray, d: int) -> np.ndarray:
    if P.shape[1] != d * (d + 1) // 2:
        raise ConfigError(f"factor rows need {d * (d + 1) // 2} entries for d={d}, got {P.shape[1]}")
    L = np.zeros((P.shape[0], d, d))
    rows, cols = np.tril_indices(d)
    L[:, rows, cols] = P
    return L


def _train_config(args):
    from .recommender import TrainConfig

    data = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: malformed YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a mapping")
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return TrainConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_gen_tasks(args) -> int:
    from .recommender import save_tasks, task_set

    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = task_set(cfg)
    for s in range(0, len(tasks), args.shard_size):
        path = save_tasks(tasks[s : s + args.shard_size], out / f"tasks_{s:07d}.npz")
        log.info("wrote %s", path)
    (out / "train_config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    print(f"{len(tasks)} tasks written to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .recommender import load_tasks, pretrain, save_checkpoint

    cfg = _train_config(args)
    tasks = None
    if args.tasks:
        shards = sorted(Path(args.tasks).glob("tasks_*.npz"))
        if not shards:
            raise ConfigError(f"no task shards in {args.tasks}")
        tasks = [t for p in shards for t in load_tasks(p)]
        if tasks[0].sample.shape[1] != cfg.d:
            raise ConfigError(f"tasks are {tasks[0].sample.shape[1]}-dimensional, config has d={cfg.d}")

    def report(epoch, loss, _model):
        print(f"epoch {epoch + 1}/{cfg.epochs}  loss {loss:.6f}", flush=True)

    result = pretrain(cfg, tasks, callback=report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out, {"train_config": cfg.to_dict(), "epoch_losses": result.epoch_losses})
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _load_model(path):
    from .recommender import CheckpointError, load_checkpoint

    if not path:
        raise ConfigError("--checkpoint is required")
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {path}") from exc
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_recommend(args) -> int:
    from .recommender import recommend_all

    model = _load_model(args.checkpoint)
    kde = recommend_all(model, _read_matrix(args.sample))
    _write_matrix(args.out, _packed_rows(kde.factor_array))
    print(f"{kde.n} factors written to {args.out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .finetune import FinetuneConfig, calibrate
    from .recommender import recommend_all

    X = _read_matrix(args.sample)
    if args.factors:
        L = _unpack_rows(_read_matrix(args.factors), X.shape[1])
        if len(L) != len(X):
            raise ConfigError(f"{len(L)} factor rows for {len(X)} sample points")
    else:
        L = recommend_all(_load_model(args.checkpoint), X).factor_array
    lo, hi = args.bracket
    try:
        cfg = FinetuneConfig(bracket=(lo, hi))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = calibrate(X, L, cfg)
    _write_matrix(args.out, _packed_rows(L * np.sqrt(res.gamma_star)))
    print(json.dumps({
        "gamma_star": res.gamma_star,
        "objective_at_gamma_star": res.objective_at_gamma_star,
        "objective_at_one": res.objective_at_one,
    }))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .bench import emit_report, load_config, parse_methods, run_experiment

    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        seed=args.seed,
        methods=parse_methods(args.methods) if args.methods else None,
        checkpoint=args.checkpoint,
    )

    def progress(done, total):
        log.info("job %d/%d", done, total)

    report = run_experiment(cfg, jobs=args.jobs, progress=progress)
    paths = emit_report(report, args.out)
    print(Path(paths["summary"]).read_text(), end="")
    status = report.status()
    if status == "failed":
        print(f"all runs failed; see {paths.get('details')}", file=sys.stderr)
        return EXIT_RUNTIME
    if status == "partial":
        print(f"{report.n_failed} runs failed; see {paths.get('details')}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args) -> int:
    from .bench import emit_report, report_from_csv

    try:
        report = report_from_csv(args.raw)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    paths = emit_report(report, args.out)
    print(Path(paths["summary"]).read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adakde", description="Adaptive KDE bandwidth selection and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-tasks", help="generate pre-training tasks as .npz shards")
    g.add_argument("--config", help="training config (YAML)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=_u64)
    g.add_argument("--shard-size", type=int, default=500)
    g.set_defaults(func=cmd_gen_tasks)

    t = sub.add_parser("pretrain", help="pre-train the bandwidth recommender")
    t.add_argument("--config", help="training config (YAML)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=_u64)
    t.add_argument("--tasks", help="directory of task shards from gen-tasks (default: generate on the fly)")
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("recommend", help="recommend per-point factors for a sample file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--sample", required=True, help="headerless CSV, one point per row")
    r.add_argument("--out", required=True, help="factor CSV (packed lower triangle per row)")
    r.set_defaults(func=cmd_recommend)

    f = sub.add_parser("finetune", help="calibrate a global bandwidth scale by leave-one-out likelihood")
    f.add_argument("--checkpoint")
    f.add_argument("--factors", help="factor CSV to calibrate instead of recommending with a checkpoint")
    f.add_argument("--sample", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--bracket", type=float, nargs=2, default=(1e-2, 1e2), metavar=("LO", "HI"))
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="run a benchmark experiment")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    e.add_argument("--methods", help="comma-separated method list (overrides the config)")
    e.add_argument("--checkpoint", help="recommender checkpoint; '{d}' expands to the dimension")
    e.add_argument("--jobs", type=int, help="worker processes (default $ADAKDE_JOBS or 1)")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("report", help="rebuild summary tables from a raw runs CSV")
    o.add_argument("--raw", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"adakde: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AdakdeError, OSError, FloatingPointError, ValueError) as exc:
        print(f"adakde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
