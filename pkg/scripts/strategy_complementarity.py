#!/usr/bin/env python3
"""Which sampling strategy finds the model's mistakes?

For every strategy, reports the mean fraction of selected points where the
ground truth disagrees with the model's top-1 (complementarity), over scenes
degraded so that errors cluster at region boundaries.
"""

import argparse

import numpy as np

from pointlab import sampling, synth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=100)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--classes", type=int, default=8)
    ap.add_argument("--regions", type=int, default=25)
    ap.add_argument("--ppi", type=int, default=10)
    ap.add_argument("--jitter", type=float, default=6.0)
    ap.add_argument("--flip", type=float, default=0.05)
    ap.add_argument("--strategies", nargs="+", default=list(sampling.STRATEGIES))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ensembles = {s for s in args.strategies if s.endswith("3m")}
    fractions: dict[str, list[float]] = {s: [] for s in args.strategies}
    accs = []
    for i in range(args.scenes):
        gt, _ = synth.generate_scene(
            synth.SceneSpec(
                width=args.width, height=args.height, classes=args.classes,
                region_count=args.regions, seed=args.seed + i,
            )
        )
        deg = dict(
            boundary_jitter_px=args.jitter, flip_rate=args.flip,
            smoothing_radius_px=2, temperature=0.5,
        )
        sm = synth.degrade_to_scoremap(gt, synth.DegradationSpec(seed=args.seed + 7000 + i, **deg))
        committee = [
            synth.degrade_to_scoremap(gt, synth.DegradationSpec(seed=args.seed + 7000 + i + 31 * m, **deg))
            for m in range(3)
        ]
        accs.append(synth.top1_accuracy(sm, gt))
        for strat in args.strategies:
            maps = committee if strat in ensembles else sm
            pts = sampling.select_points(sampling.StrategySpec(kind=strat, seed=args.seed + i), maps, args.ppi)
            try:
                fractions[strat].append(sampling.complementarity_fraction(pts, gt, sm))
            except ValueError:
                pass

    print(f"model top-1 accuracy {np.mean(accs):.3f} over {args.scenes} scenes, {args.ppi} ppi")
    print("strategy,mean_fraction,ci95_low,ci95_high,scenes")
    baseline = np.mean(fractions["uniform"]) if fractions.get("uniform") else None
    for strat in args.strategies:
        arr = np.array(fractions[strat])
        se = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
        rel = f"  ({arr.mean() / baseline:.2f}x uniform)" if baseline else ""
        print(f"{strat},{arr.mean():.4f},{arr.mean() - 1.96 * se:.4f},{arr.mean() + 1.96 * se:.4f},{len(arr)}{rel}")


if __name__ == "__main__":
    main()
