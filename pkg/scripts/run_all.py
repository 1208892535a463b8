"""Train the reference toy model once and run every experiment.

    python3 scripts/run_all.py                    # reference settings, writes runs/
    python3 scripts/run_all.py configs/quick.json # seconds-scale smoke run
"""
import argparse
import sys
import time
from pathlib import Path

from pladis.harness import experiments, report
from pladis.harness.config import ConfigError, load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--only", nargs="+", choices=sorted(experiments.EXPERIMENTS), default=None)
    args = ap.parse_args()
    try:
        cfg = load_config(args.config, out=args.out)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    t0 = time.perf_counter()
    timings = experiments.run_all(cfg, out, args.only)
    print(f"model: {timings.pop('train'):.1f}s")
    failed = []
    for name, (res, sec) in timings.items():
        failed += [f"{name}:{c}" for c in res.gated_failures]
        for r in res.summary[:40]:
            print(name, {k: (round(v, 4) if isinstance(v, float) else v) for k, v in r.items()})
        print(f"{name}: {sec:.1f}s, gated failures: {res.gated_failures or 'none'}")
    total = time.perf_counter() - t0
    report.write_meta(out / "run_all.meta.json", cfg.to_dict(), dict(elapsed_sec=total, gated_failures=failed))
    print(f"total {total:.1f}s")
    return 3 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
