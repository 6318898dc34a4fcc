"""Command-line interface.

Subcommands: train, sample, extract, evaluate, oracle, selftest.  Every
command is deterministic given its inputs and seed; output files are
byte-reproducible, with timestamps confined to a sidecar ``run.log``.

Exit codes: 0 success, 2 invalid configuration or usage, 3 training
aborted on a non-finite loss (last good checkpoint retained).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    DistributionSpec,
    KinematicsSpec,
    MetricsReport,
    kinematics_dataset,
    mmd,
    rejection_sample,
    resim_error,
    sample_target,
)
from .config import ConfigError, RunConfig, load_config
from .coupling import InvertibleStack
from .flows import CisrModel, FlowModel, IsrModel
from .modelio import load_model, save_model, write_csv, write_json, write_samples_csv
from .symbolic import compose_model, expression_set_to_json
from .train import TrainingDiverged, train


class _RunLog:
    """Sidecar log; the only artifact allowed to carry timestamps."""

    def __init__(self, path):
        self.path = Path(path)
        self.lines = []

    def add(self, msg):
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.lines.append(f"{stamp} {msg}")
        print(msg)

    def flush(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("\n".join(self.lines) + "\n", encoding="utf-8")


def _build_dataset(cfg: RunConfig):
    if cfg.benchmark == "kinematics":
        spec = KinematicsSpec(y_target=tuple(cfg.target_y), eps=cfg.eps)
        x, y = kinematics_dataset(cfg.n_train, seed=cfg.seed, spec=spec)
        return (x, y), spec
    spec = DistributionSpec(cfg.benchmark)
    return (sample_target(spec, cfg.n_train, seed=cfg.seed),), spec


def _build_model(cfg: RunConfig, data):
    d_x = data[0].shape[1]
    cond = data[1].shape[1] if cfg.kind == "conditional-inverse" else 0
    stack = InvertibleStack.build(
        d_x, cfg.blocks, cfg.subnet_layers, cfg.activations,
        clamp=cfg.clamp, cond_dim=cond, seed=cfg.seed, pad_weight=cfg.pad_weight,
    )
    if cfg.kind == "density":
        return FlowModel(stack)
    if cfg.kind == "inverse":
        return IsrModel(stack, d_y=data[1].shape[1], sigma2=cfg.sigma2)
    return CisrModel(stack)


def cmd_train(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = _RunLog(out / "run.log")
    log.add(f"isrflow {__version__} train: kind={cfg.kind} benchmark={cfg.benchmark} seed={cfg.seed}")
    data, _ = _build_dataset(cfg)
    model = _build_model(cfg, data)
    log.add(f"dataset n={data[0].shape[0]}, model width={model.stack.width}, "
            f"blocks={len(model.stack.blocks())}")

    def checkpoint(epoch, m):
        save_model(m, out / f"checkpoint-epoch{epoch + 1:04d}.json", config=cfg.to_dict())
        log.add(f"checkpoint at epoch {epoch + 1}")

    t0 = time.perf_counter()
    try:
        model, history = train(model, data, cfg.train,
                               checkpoint_cb=checkpoint if cfg.train.checkpoint_every else None)
    except TrainingDiverged as exc:
        log.add(f"ABORT: {exc}")
        if exc.last_good:
            for (name, arr) in model.param_items():
                arr[:] = exc.last_good[name]
            save_model(model, out / "checkpoint-lastgood.json", config=cfg.to_dict())
            log.add("last good checkpoint written to checkpoint-lastgood.json")
        log.flush()
        return 3
    log.add(f"trained {cfg.train.epochs} epochs in {time.perf_counter() - t0:.1f}s, "
            f"final loss {history.final_loss():.6f}")
    save_model(model, out / "model.json", config=cfg.to_dict(), history=history)
    history.to_csv(out / "history.csv")
    log.add("wrote model.json, history.csv")
    log.flush()
    return 0


def _require_target(model, args):
    if model.kind == "flow":
        return None
    if args.target_y is None:
        print("this model needs --target-y", file=sys.stderr)
        return 2
    return np.asarray([float(v) for v in args.target_y.split(",")])


def cmd_sample(args):
    model, _ = load_model(args.model)
    y_star = _require_target(model, args)
    if isinstance(y_star, int):
        return y_star
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.n == 0:
        samples = np.zeros((0, model.d_x))
    elif model.kind == "flow":
        samples = model.sample(args.n, seed=args.seed)
    else:
        samples = model.sample_posterior(y_star, args.n, seed=args.seed)
    header = [f"x{i + 1}" for i in range(model.d_x)]
    write_csv(out, header, samples)
    print(f"wrote {args.n} samples to {out}")
    return 0


def cmd_extract(args):
    model, _ = load_model(args.model)
    es = compose_model(model, prune_tol=args.prune_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "expressions.txt").write_text(es.render_text(), encoding="utf-8")
    expression_set_to_json(es, out / "expressions.json")
    print(es.render_text())
    print(f"wrote {out / 'expressions.txt'} and {out / 'expressions.json'}")
    return 0


def cmd_evaluate(args):
    model, snapshot = load_model(args.model)
    n = args.n
    seed = args.seed
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.benchmark == "kinematics":
        if model.kind == "flow":
            print("kinematics evaluation needs an inverse or conditional model", file=sys.stderr)
            return 2
        y_star = np.asarray([float(v) for v in args.target_y.split(",")]) \
            if args.target_y else np.asarray(KinematicsSpec().y_target)
        spec = KinematicsSpec(y_target=tuple(y_star), eps=args.eps)
        oracle, rate = rejection_sample(y_star, args.eps, n, seed=seed, spec=spec)
        post = model.sample_posterior(y_star, n, seed=seed + 1)
        raw = mmd(post, oracle)
        x_test, y_test = kinematics_dataset(10000, seed=seed + 2, spec=spec)
        nll = model.nll(x_test, y_test)
        report = MetricsReport(
            err_post=MetricsReport.clamp(raw), err_post_raw=raw,
            err_resim=resim_error(post, y_star, spec), nll=nll,
            n_model_samples=n, n_reference_samples=n, seed=seed,
            y_target=tuple(y_star), eps=args.eps, benchmark="kinematics",
            extra={"oracle_acceptance_rate": rate},
        )
    else:
        if model.kind != "flow":
            print("density evaluation needs a flow model", file=sys.stderr)
            return 2
        spec = DistributionSpec(args.benchmark)
        fresh = sample_target(spec, n, seed=seed)
        ours = model.sample(n, seed=seed + 1)
        raw = mmd(ours, fresh)
        report = MetricsReport(
            err_post=MetricsReport.clamp(raw), err_post_raw=raw,
            err_resim=None, nll=model.nll(fresh),
            n_model_samples=n, n_reference_samples=n, seed=seed,
            benchmark=args.benchmark,
        )
    write_json(out, report.to_dict())
    print(f"wrote {out}")
    for key in ("err_post", "err_resim", "nll"):
        val = report.to_dict()[key]
        if val is not None:
            print(f"  {key} = {val:.6f}")
    return 0


def cmd_oracle(args):
    y_star = np.asarray([float(v) for v in args.target_y.split(",")])
    samples, rate = rejection_sample(y_star, args.eps, args.n, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_samples_csv(out, samples)
    print(f"wrote {args.n} oracle samples to {out} (acceptance rate {rate:.3e})")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    return run_selftest()


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="isrflow",
        description="Invertible symbolic maps: train, sample, extract expressions, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"isrflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-y", default=None, help="comma-separated observation for posterior sampling")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extract", help="emit closed-form expressions for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prune-tol", type=float, default=0.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="compute posterior/density quality metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--benchmark", required=True,
                   choices=["gaussian", "banana", "ring", "mog", "kinematics"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-y", default=None)
    p.add_argument("--eps", type=float, default=0.02)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="rejection-sampling ground-truth posterior")
    p.add_argument("--target-y", default="0,1.5")
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="run the built-in invariant suites")
    p.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
