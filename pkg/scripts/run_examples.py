"""Run every config in configs/ and print a one-line summary per run."""

import argparse
import glob
import os

from poisson_sde.scenario import ConfigError, run_scenario, validate_config

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=os.path.join(HERE, "..", "configs"))
    ap.add_argument("--out", default=os.path.join(HERE, "..", "out"))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    worst = 0
    for path in sorted(glob.glob(os.path.join(args.configs, "*.json"))):
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            cfg = validate_config(open(path).read())
        except ConfigError as e:
            print(f"{name:<22} invalid: {e.errors[0]}")
            continue
        rep = run_scenario(cfg, out_dir=os.path.join(args.out, name), threads=args.threads)
        worst = max(worst, rep.exit_code)
        print(f"{name:<22} exit {rep.exit_code}  violations {rep.results['violations']}  {rep.wall_time:.1f}s")
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
