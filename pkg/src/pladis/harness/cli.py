"""Command-line entry point.

Exit codes: 0 success, 2 invalid config or arguments, 3 a gated check failed.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .. import simplex
from ..diffusion import data, model, sampling
from ..attention import AttentionConfig
from . import experiments, report
from .metrics import conditional_accuracy
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_GATE = 0, 2, 3


def _num(v: float) -> str:
    return f"{v:.6g}" if v != 0 else "0"


def _read_vector(args) -> np.ndarray:
    if args.values:
        text = " ".join(args.values)
    elif args.input:
        text = Path(args.input).read_text()
    else:
        text = sys.stdin.read()
    return np.array([float(t) for t in text.replace(",", " ").split()])


def cmd_entmax(args, cfg) -> int:
    try:
        z = _read_vector(args)
        if args.alpha == 1.0:
            p, tau, kap = simplex.softmax(z), None, int(z.size)
        else:
            p, tau, kap = simplex.entmax_threshold(z, args.alpha)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(" ".join(_num(v) for v in p))
    print(f"tau={_num(float(tau))}" if tau is not None else "tau=n/a")
    print(f"kappa={int(kap)}")
    return EXIT_OK


def _print_checks(res: experiments.ExperimentResult):
    for c in res.checks:
        tag = "report" if c["reported_only"] else ("PASS" if c["passed"] else "FAIL")
        print(f"[{tag}] {c['check']} = {c['value']}")


def _finish(res: experiments.ExperimentResult, cfg: ExperimentConfig, out: Path, t0: float) -> int:
    res.write(out, cfg, time.perf_counter() - t0)
    _print_checks(res)
    if res.name == "bounds":
        viol = sum(r["violations"] for r in res.summary)
        print(f"violations: {viol} over {len(res.rows)} rows")
    print(f"wrote {out / (res.name + '.csv')}")
    return EXIT_GATE if res.gated_failures else EXIT_OK


def cmd_experiment(args, cfg) -> int:
    out = Path(cfg.out)
    t0 = time.perf_counter()
    fn = experiments.EXPERIMENTS[args.command]
    res = fn(cfg) if args.command in ("bounds", "noise") else fn(cfg, out)
    return _finish(res, cfg, out, t0)


def cmd_all(args, cfg) -> int:
    out = Path(cfg.out)
    t0 = time.perf_counter()
    timings = experiments.run_all(cfg, out)
    failed = []
    print(f"model ready in {timings.pop('train'):.1f}s")
    for name, (res, sec) in timings.items():
        print(f"== {name} ({sec:.1f}s)")
        _print_checks(res)
        failed += [f"{name}:{c}" for c in res.gated_failures]
    total = time.perf_counter() - t0
    report.write_meta(out / "all.meta.json", cfg.to_dict(),
                      dict(elapsed_sec=total, gated_failures=failed,
                           seconds={k: v[1] for k, v in timings.items()}))
    print(f"total {total:.1f}s; gated failures: {', '.join(failed) or 'none'}")
    return EXIT_GATE if failed else EXIT_OK


def cmd_train(args, cfg) -> int:
    out = Path(cfg.out)
    t0 = time.perf_counter()
    result, sched = experiments.train_reference(cfg, log_every=args.log_every)
    path = model.save_checkpoint(out / "model.ckpt", result.params, result.config.model, sched,
                                 dict(train_key=experiments._train_key(cfg)))
    report.write_csv(out / "train_loss.csv", [dict(iter=i, loss=v) for i, v in enumerate(result.losses)])
    sm = result.smoothed()
    ratio = float(sm[-1] / sm[0]) if len(sm) else float("nan")
    report.write_meta(out / "train.meta.json", cfg.to_dict(),
                      dict(elapsed_sec=time.perf_counter() - t0, smoothed_loss_ratio=ratio))
    print(f"saved {path}; smoothed loss ratio final/initial = {ratio:.3f}")
    return EXIT_OK


def cmd_sample(args, cfg) -> int:
    out = Path(cfg.out)
    params, mcfg, sched = experiments.get_model(cfg, out)
    attn = AttentionConfig(alpha=cfg.attn_alpha, lam=args.lam if args.lam is not None else cfg.attn_lam)
    try:
        g = experiments.guidance_of(cfg)
        conds = np.array([args.cond] if args.cond else data.CELLS, dtype=np.int64)
        conds = np.repeat(conds, args.n, axis=0)
        res = sampling.sample(model.Denoiser(params, mcfg), conds, sched,
                              sampling.SamplerConfig(cfg.steps, cfg.seed, attn), g)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rows = [dict(cond_row=c[0], cond_col=c[1], **{f"p{k}": v for k, v in enumerate(img)})
            for c, img in zip(conds, res.images)]
    report.write_csv(out / "samples.csv", rows)
    print(f"{len(rows)} samples, nfe={res.nfe}, accuracy={conditional_accuracy(res.images, conds):.3f}")
    print(f"wrote {out / 'samples.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="master seed (overrides config)")
        g.add_argument("--config", default=default, help="flat JSON config file")
        g.add_argument("--out", default=default, help="output directory (overrides config)")
        g.add_argument("--threads", type=int, default=default, help="torch intra-op threads")
        return g

    # global flags work before or after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it
    common = globals_(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="pladis", parents=[globals_(None)],
                                description="Sparse-attention guidance experiments at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("entmax", parents=[common], help="transform a score vector")
    e.add_argument("values", nargs="*", help="scores; read from --input or stdin if omitted")
    e.add_argument("--alpha", type=float, default=1.5)
    e.add_argument("--input", default=None)

    for name, text in (("bounds", "retrieval error vs bounds sweep"),
                       ("noise", "noise-robustness curves"),
                       ("sweep-alpha", "alpha sweep with the toy model"),
                       ("sweep-lambda", "lambda sweep with the toy model"),
                       ("sweep-temp", "temperature sweep with the toy model"),
                       ("ablate-layers", "per-block PLADIS ablation")):
        sub.add_parser(name, parents=[common], help=text)

    sub.add_parser("all", parents=[common], help="train once, then run every experiment")

    t = sub.add_parser("train", parents=[common], help="train the toy denoiser")
    t.add_argument("--log-every", type=int, default=0)

    s = sub.add_parser("sample", parents=[common], help="sample from a trained model")
    s.add_argument("--cond", type=int, nargs=2, metavar=("ROW", "COL"), default=None)
    s.add_argument("--n", type=int, default=1, help="samples per condition")
    s.add_argument("--lam", type=float, default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads:
        import torch
        torch.set_num_threads(args.threads)
    handlers = dict(entmax=cmd_entmax, train=cmd_train, sample=cmd_sample, all=cmd_all)
    try:
        return handlers.get(args.command, cmd_experiment)(args, cfg)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
