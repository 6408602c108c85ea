"""Command-line surface: train | tournament | eval | plot.

Exit codes: 0 success, 1 usage/config error, 2 numerical divergence (with
partial artifacts written).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import metrics, storage
from .autodiff import forward
from .ortho import gram_deviation, orientation
from .plotting import save_scatter_png
from .storage import ConfigError
from .wgan import SCHEMES, DivergedError, sample_real, train

NDB_K_SET = (1, 2, 5, 10, 20, 50, 100)
EVAL_KINDS = ("lipschitz", "gram", "spectrum", "ndb", "gradnorm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="orthowgan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed-override", type=int, default=None)
    t.add_argument("--budget-seconds", type=float, default=None,
                   help="override wall-clock budget (0 disables)")

    tour = sub.add_parser("tournament", help="cross-evaluate trained checkpoints")
    tour.add_argument("checkpoints", nargs="+", help="two or more checkpoint.json paths")
    tour.add_argument("--config", required=True, help="data config (dataset keys + seed)")
    tour.add_argument("--out", required=True, help="output directory")
    tour.add_argument("--n-gen", type=int, default=4096)
    tour.add_argument("--n-eval", type=int, default=4096,
                      help="real samples per train/test pool")
    tour.add_argument("--seed-override", type=int, default=None)

    e = sub.add_parser("eval", help="write one metric table for a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", required=True, help="data config (dataset keys + seed)")
    e.add_argument("--which", required=True, choices=EVAL_KINDS)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--n-points", type=int, default=1024)
    e.add_argument("--n-samples", type=int, default=10000,
                   help="train/generated sample count for ndb")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--ndb-self-check", action="store_true",
                   help="replace generated samples with a held-out half of the data")
    e.add_argument("--seed-override", type=int, default=None)

    pl = sub.add_parser("plot", help="render a real-vs-generated scatter PNG")
    pl.add_argument("--out", required=True, help="output .png path")
    pl.add_argument("--samples", help="csv with columns x,y,kind")
    pl.add_argument("--checkpoint", help="sample the checkpoint's generator instead")
    pl.add_argument("--config", help="data config (required with --checkpoint)")
    pl.add_argument("--n", type=int, default=2048, help="points per set with --checkpoint")
    pl.add_argument("--seed-override", type=int, default=None)
    return p


def cmd_train(args) -> int:
    values = storage.load_config(args.config)
    if args.seed_override is not None:
        values["seed"] = args.seed_override
    if args.budget_seconds is not None:
        values["budget_seconds"] = args.budget_seconds
    cfg, data = storage.build_train_setup(values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    budget = cfg.budget_seconds
    try:
        state = train(cfg, data)
    except DivergedError as exc:
        if exc.state is not None:
            _write_train_artifacts(out, exc.state, budget, diverged=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write_train_artifacts(out, state, budget)
    print(f"trained {cfg.scheme} for {state.iter} iterations -> {out}")
    return 0


def _write_train_artifacts(out: Path, state, budget_seconds: float, diverged: str | None = None):
    storage.save_checkpoint(out / "checkpoint.json", state)
    storage.write_metrics_csv(out / "metrics.csv", state.metric_log)
    extra = {"diverged": diverged} if diverged else None
    storage.write_manifest(out / "run_manifest.json", state, budget_seconds, extra=extra)


def _load_data_pools(args, n_train: int, n_test: int | None = None):
    values = storage.load_config(args.config)
    data = storage.build_dataset(values)
    seed = args.seed_override if args.seed_override is not None else int(values.get("seed", 0))
    rng = np.random.default_rng(seed)
    train_pool = sample_real(data, n_train, rng)
    test_pool = sample_real(data, n_test, rng) if n_test else None
    return data, rng, train_pool, test_pool


def cmd_tournament(args) -> int:
    if len(args.checkpoints) < 2:
        raise ConfigError("tournament needs at least 2 checkpoints")
    cks = [storage.load_checkpoint(p) for p in args.checkpoints]
    dims = {ck.critic.in_dim for ck in cks}
    if len(dims) != 1:
        raise ConfigError(f"checkpoints disagree on data dim: {sorted(dims)}")
    _, rng, train_pool, test_pool = _load_data_pools(args, args.n_eval, args.n_eval)
    models = [(ck.critic, ck.generator) for ck in cks]
    result = metrics.tournament(models, train_pool, test_pool, args.n_gen, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [Path(p).name for p in args.checkpoints]
    storage.write_tournament_csv(out / "tournament.csv", result, names)
    storage.write_tournament_json(out / "tournament.json", result, names)
    order = np.argsort(-np.nan_to_num(result.s, nan=-np.inf))
    ranking = ", ".join(f"{names[i]} (s={result.s[i]:.4g})" for i in order)
    print(f"tournament ranking: {ranking}")
    if result.excluded:
        print(f"excluded (|w_hat| <= 1e-9): {[names[i] for i in result.excluded]}")
    return 0


def _generate(ck, n: int, rng) -> np.ndarray:
    z = rng.standard_normal((n, ck.generator.in_dim))
    return forward(ck.generator, z)


def cmd_eval(args) -> int:
    ck = storage.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.which == "gram":
        rows = [
            [i, w.shape[0], w.shape[1], orientation(w), float(gram_deviation(w))]
            for i, w in enumerate(ck.critic.weights)
        ]
        storage.write_rows_csv(out / "gram.csv", ["layer", "rows", "cols", "orientation", "gram_deviation"], rows)
    elif args.which == "spectrum":
        rows = []
        for i, sigmas in enumerate(metrics.singular_spectrum(ck.critic)):
            rows.extend([i, j, float(s)] for j, s in enumerate(sigmas))
        storage.write_rows_csv(out / "spectrum.csv", ["layer", "index", "sigma"], rows)
    elif args.which == "lipschitz":
        _, rng, real, _ = _load_data_pools(args, args.n_points)
        fake = _generate(ck, args.n_points, rng)
        norms = metrics.interpolate_grad_norms(ck.critic, real, fake, args.n_points, rng)
        penalty_mean = float(((norms - 1.0) ** 2).mean())
        rows = [[args.n_points, float(norms.max()), float(norms.mean()), penalty_mean]]
        storage.write_rows_csv(
            out / "lipschitz.csv",
            ["n_points", "lipschitz_max", "grad_norm_mean", "penalty_mean"],
            rows,
        )
    elif args.which == "gradnorm":
        _, rng, _, _ = _load_data_pools(args, 1)
        fake = _generate(ck, args.n_points, rng)
        from .autodiff import input_gradient

        norms = np.linalg.norm(input_gradient(ck.critic, fake), axis=1)
        rows = [[args.n_points, float(norms.mean()), float(norms.max())]]
        storage.write_rows_csv(out / "gradnorm.csv", ["n", "mean_grad_norm", "max_grad_norm"], rows)
    elif args.which == "ndb":
        if args.ndb_self_check:
            _, rng, pool, _ = _load_data_pools(args, 2 * args.n_samples)
            train_half, gen_half = pool[: args.n_samples], pool[args.n_samples:]
        else:
            _, rng, train_half, _ = _load_data_pools(args, args.n_samples)
            gen_half = _generate(ck, args.n_samples, rng)
        rows = []
        for k in NDB_K_SET:
            if k > train_half.shape[0]:
                continue
            report = metrics.ndb_modes(train_half, gen_half, k, args.alpha, rng)
            rows.append([k, report.significant_bins, report.skipped_bins,
                         train_half.shape[0], gen_half.shape[0], args.alpha])
        storage.write_rows_csv(
            out / "ndb.csv",
            ["k", "significant_bins", "skipped_bins", "total_train", "total_generated", "alpha"],
            rows,
        )
    print(f"wrote {args.which} table to {out}")
    return 0


def cmd_plot(args) -> int:
    if bool(args.samples) == bool(args.checkpoint):
        raise ConfigError("plot needs exactly one of --samples or --checkpoint")
    if args.samples:
        real, generated = storage.read_samples_csv(args.samples)
    else:
        if not args.config:
            raise ConfigError("--checkpoint plotting needs --config for the real samples")
        ck = storage.load_checkpoint(args.checkpoint)
        _, rng, real, _ = _load_data_pools(args, args.n)
        generated = _generate(ck, args.n, rng)
    if (real.size and real.shape[1] != 2) or (generated.size and generated.shape[1] != 2):
        raise ConfigError("plot requires 2-D data")
    save_scatter_png(args.out, real, generated)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "tournament": cmd_tournament,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        hint = f" (valid schemes: {', '.join(SCHEMES)})" if "scheme" in str(exc) else ""
        print(f"error: {exc}{hint}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
