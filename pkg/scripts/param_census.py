#!/usr/bin/env python3
"""Parameter counts per component for both width settings, with and without the 1x1 head."""
import argparse

from mscnet.backbone import analytic_param_count
from mscnet.model import MSCNet, ModelConfig, count_params


def census(alpha: float, include_head: bool, depth: int) -> None:
    total, groups = count_params(MSCNet(ModelConfig(alpha=alpha, include_head=include_head)), depth)
    analytic = analytic_param_count(alpha, include_head)
    print(f"alpha={alpha} include_head={include_head}")
    for name, n in groups.items():
        print(f"  {name:<26}{n:>12,}")
    print(f"  {'total':<26}{total:>12,}")
    enc = sum(n for k, n in groups.items() if k.startswith("encoder"))
    print(f"  {'analytic encoder':<26}{analytic:>12,}  (measured {enc:,}, {100 * (enc - analytic) / analytic:+.2f}%)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depth", type=int, default=1)
    args = ap.parse_args()
    for alpha in (0.25, 1.0):
        for head in (False, True):
            census(alpha, head, args.depth)


if __name__ == "__main__":
    main()
