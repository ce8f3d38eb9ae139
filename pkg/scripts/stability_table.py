"""Print the stability table (X_k, Y_k, C_k) for a configuration.

    python3 scripts/stability_table.py configs/quick.toml
"""
from __future__ import annotations

import sys

from dtnprobe.config import load_config
from dtnprobe.experiments import Context, exp_stability


def main(path):
    cfg = load_config(path)
    ctx = Context(cfg, cfg.output_dir)
    res = exp_stability(ctx)
    m = res.metrics
    print(f"{'eps':>8} {'X':>12} {'Y':>10} {'C_k':>10}")
    for e, x, y in zip(cfg.stability.eps, m["X"], m["Y"]):
        c = y / x ** m["exponent"] if x > 0 else float("nan")
        print(f"{e:8.3g} {x:12.4e} {y:10.4g} {c:10.4g}")
    print(f"spread {m['spread']:.3f}, C_hat {m['C_hat']:.4g}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else "configs/quick.toml"))
