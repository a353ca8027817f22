#!/usr/bin/env python3
"""Questions per YES as a function of model quality.

Simulates complete campaigns against models of decreasing top-1 accuracy and
prints how many yes/no questions each point costs, plus the fraction of
points resolving YES within three rounds.
"""

import argparse

import numpy as np

from pointlab import campaign as camp
from pointlab import sampling, synth
from pointlab.domain import ImageRecord


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=100)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--height", type=int, default=32)
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--ppi", type=int, default=10)
    ap.add_argument("--flip-rates", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.2, 0.3])
    ap.add_argument("--epsilon", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("flip_rate,top1_acc,points,questions_per_yes,yes_within_3,speedup")
    for flip in args.flip_rates:
        records, gts, scoremaps, accs = [], {}, {}, []
        for i in range(args.scenes):
            gt, labels = synth.generate_scene(
                synth.SceneSpec(
                    width=args.width, height=args.height, classes=args.classes,
                    region_count=8, seed=args.seed + i,
                )
            )
            sm = synth.degrade_to_scoremap(
                gt, synth.DegradationSpec(flip_rate=flip, seed=args.seed + 5000 + i)
            )
            image_id = f"scene_{i:04d}"
            gts[image_id] = gt
            scoremaps[image_id] = sm
            accs.append(synth.top1_accuracy(sm, gt))
            records.append(
                ImageRecord(
                    image_id=image_id, label_map_path=None, score_map_paths=(),
                    image_level_labels=labels,
                )
            )
        config = camp.CampaignConfig(
            strategy=sampling.StrategySpec(kind="class_balanced", seed=args.seed),
            ppi=args.ppi,
        )
        state = camp.run_simulation(
            records, gts, scoremaps, config,
            error_rate=args.epsilon, unsure_rate=0.0, seed=args.seed,
        )
        rs = camp.round_stats(state)
        cost = camp.campaign_cost(state)
        qpy = "nan" if rs.mean_questions_per_yes is None else f"{rs.mean_questions_per_yes:.3f}"
        print(
            f"{flip},{np.mean(accs):.3f},{rs.points_total},{qpy},"
            f"{rs.fraction_yes_within(3):.4f},{cost.speedup_vs_polygons:.2f}x"
        )


if __name__ == "__main__":
    main()
