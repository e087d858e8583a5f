"""``desmil`` command line: generate, split, train, evaluate, experiment.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import subprocess
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import SECTIONS, Config, ConfigError, dump_config, load_config
from .data import (
    DataError,
    Dataset,
    generate_synthetic,
    load_interactions,
    ood_split,
    random_split,
    read_split,
    write_interactions,
    write_split,
    write_truth,
)
from .evaluation import evaluate, weight_histogram, write_metrics, write_weight_histogram
from .model import Hyperparams
from .trainer import TrainState, fit_state

log = logging.getLogger("desmil")

CONFIG_ENV = "DESMIL_CONFIG"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class NumericalError(RuntimeError):
    pass


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@contextlib.contextmanager
def thread_limit(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _outdir(cfg: Config) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def load_dataset(cfg: Config, need_split: bool = True) -> Dataset:
    path = cfg.path("interactions", "interactions.csv")
    if not path.exists():
        raise DataError(f"interactions file {path} not found")
    ds = load_interactions(path, cfg.min_len)
    if not need_split:
        return ds
    if cfg.split_mode == "ood":
        return ood_split(ds, cfg.seed)
    if cfg.split_mode == "random":
        return random_split(ds, cfg.seed)
    split_path = cfg.path("splits", "splits.csv")
    if not split_path.exists():
        raise DataError(f"split file {split_path} not found")
    split, env = read_split(split_path)
    return ds.with_split({u: s for u, s in split.items() if u in ds.sequences},
                         {u: e for u, e in env.items() if u in ds.sequences})


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: Config) -> None:
    out = _outdir(cfg)
    synth = cfg.synthetic()
    ds, truth = generate_synthetic(synth)
    inter = cfg.path("interactions", "interactions.csv")
    splits = cfg.path("splits", "splits.csv")
    sidecar = cfg.path("truth", "truth.csv")
    write_interactions(ds, inter)
    write_split(ds, splits)
    write_truth(synth, ds, truth, sidecar)
    log.info("wrote %d users to %s (splits %s, truth %s) under %s", len(ds.users), inter, splits, sidecar, out)


def cmd_split(cfg: Config) -> None:
    if cfg.split_mode == "file":
        raise ConfigError("split needs split_mode = ood or random")
    _outdir(cfg)
    ds = load_dataset(cfg)
    path = cfg.path("splits", "splits.csv")
    write_split(ds, path)
    counts = {s: len(ds.users_in(s)) for s in ("train", "valid", "test")}
    log.info("%s split written to %s: %s", cfg.split_mode, path, counts)


def _write_manifest(cfg: Config, path: Path, extra: dict) -> None:
    lines = [f"# build = {build_id()}"]
    lines += [f"# {k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n" + dump_config(cfg), encoding="utf-8")


def cmd_train(cfg: Config, resume: str | None = None) -> None:
    from .plotting import plot_curves, plot_weight_histogram

    out = _outdir(cfg)
    ds = load_dataset(cfg)
    hp = cfg.hyperparams(ds.vocab)
    state = None
    if resume:
        state = TrainState.from_checkpoint(load_checkpoint(resume))
        if state.hp != hp:
            raise ConfigError("resume checkpoint hyperparameters differ from the configuration")

    def on_epoch_end(st: TrainState) -> None:
        save_checkpoint(st.to_checkpoint(), out / "state.ckpt")

    with thread_limit(cfg.threads):
        state = fit_state(
            ds, hp, cfg.seed, eval_every=cfg.eval_every, patience=cfg.patience, max_epochs=cfg.max_epochs,
            state=state, on_epoch_end=on_epoch_end,
        )
    save_checkpoint(state.to_checkpoint(), out / "state.ckpt")
    save_checkpoint(state.best_checkpoint(), out / "best.ckpt")
    state.curve.write_csv(out / "curve.csv")
    weights = state.weights.values()
    write_weight_histogram(weights, out / "weights_hist.csv")
    plot_curves({f"lambda={hp.lam:g}": state.curve}, out / "curve.png")
    plot_weight_histogram(*weight_histogram(weights), out / "weights_hist.png")
    _write_manifest(cfg, out / "manifest.txt", {
        "vocab": ds.vocab,
        "steps": state.q,
        "epochs": state.epoch,
        "best_step": state.best_q,
        "best_valid_recall50": repr(state.best_metric),
        "weights_recorded": len(weights),
    })
    log.info("trained %d steps; best valid Recall@50 %.4f at step %d", state.q, state.best_metric, state.best_q)


def cmd_evaluate(cfg: Config, checkpoint: str, splits=("valid", "test"), p_list=(20, 50)) -> Path:
    from .plotting import plot_metrics

    out = _outdir(cfg)
    ckpt = load_checkpoint(checkpoint)
    hp = Hyperparams.from_dict(ckpt.hyperparams)
    for key in sorted(cfg.explicit & set(SECTIONS["model"])):
        if getattr(cfg, key) != getattr(hp, key):
            raise ConfigError(f"checkpoint has {key} = {getattr(hp, key)!r} but the configuration says {getattr(cfg, key)!r}")
    ds = load_dataset(cfg)
    if ds.vocab != hp.vocab:
        raise ConfigError(f"checkpoint vocabulary {hp.vocab} does not match the data ({ds.vocab})")
    params = TrainState.from_checkpoint(ckpt).params
    with thread_limit(cfg.threads):
        reports = [evaluate(params, hp, ds, s, p_list) for s in splits if ds.users_in(s)]
    if not reports:
        raise DataError(f"none of the splits {list(splits)} has users")
    path = out / "metrics.csv"
    write_metrics(reports, path)
    plot_metrics(reports, out / "metrics.png")
    for r in reports:
        log.info("%s: %s", r.split, ", ".join(f"R@{p}={r.recall[p]:.4f}" for p in sorted(r.recall)))
    return path


def cmd_experiment(cfg: Config, seeds: int, lams) -> None:
    from .experiment import hsic_below_fraction, relative_change, run_ablation
    from .plotting import plot_ablation, plot_curves

    out = _outdir(cfg)
    overrides = {k: getattr(cfg, k) for k in SECTIONS["model"] if k != "lam"}
    with thread_limit(cfg.threads):
        rows, curves = run_ablation(cfg.synthetic(), overrides, range(cfg.seed, cfg.seed + seeds), lams,
                                    cfg.max_epochs, cfg.patience, cfg.eval_every)
    with (out / "ablation.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for (seed, lam), curve in curves.items():
        curve.write_csv(out / f"curve_seed{seed}_lam{lam:g}.csv")
    first = cfg.seed
    plot_curves({f"lambda={lam:g}": curves[(first, lam)] for lam in lams}, out / "curves.png")
    plot_ablation(rows, out / "ablation.png")
    base, treated = min(lams), max(lams)
    print(f"OOD test Recall@20 change ({treated:g} vs {base:g}): {relative_change(rows, 'test_recall20', base, treated):+.2%}")
    print(f"valid Recall@20 change ({treated:g} vs {base:g}): {relative_change(rows, 'valid_recall20', base, treated):+.2%}")
    fr = [hsic_below_fraction(curves[(s, treated)], curves[(s, base)]) for s in range(first, first + seeds)]
    print(f"fraction of steps with lower HSIC: {', '.join(f'{f:.2f}' for f in fr)}")


# ---------------------------------------------------------------------------
# argument parsing


def _option_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    for section, keys in SECTIONS.items():
        group = p.add_argument_group(section)
        for k in keys:
            group.add_argument(f"--{k}", dest=f"opt_{k}", metavar="VALUE")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _option_parser()
    parser = argparse.ArgumentParser(prog="desmil", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"desmil {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic shifted dataset")
    sub.add_parser("split", parents=[common], help="write an ood or random user split")
    tp = sub.add_parser("train", parents=[common], help="train and export checkpoints, curves and weights")
    tp.add_argument("--resume", help="state checkpoint to continue from")
    ep = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--splits-to-eval", default="valid,test")
    xp = sub.add_parser("experiment", parents=[common], help="lambda ablation over seeds on synthetic data")
    xp.add_argument("--seeds", type=int, default=5)
    xp.add_argument("--lams", default="0,1")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    try:
        cfg = load_config(args.config or os.environ.get(CONFIG_ENV), overrides)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "split":
            cmd_split(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.resume)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint, tuple(s for s in args.splits_to_eval.split(",") if s))
        elif args.command == "experiment":
            cmd_experiment(cfg, args.seeds, tuple(float(x) for x in args.lams.split(",")))
    except ConfigError as exc:
        print(f"desmil: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"desmil: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NumericalError) as exc:
        print(f"desmil: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
