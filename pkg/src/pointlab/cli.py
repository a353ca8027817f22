"""Command line driver.

Subcommands: synth, sample, campaign, eval, stats, serve, figdata.
Every run writes a manifest.json next to its outputs recording the
subcommand, options and inputs (no timestamps: identical invocations
must produce bit-identical trees).

Exit codes: 0 ok, 1 usage, 2 I/O, 3 validation/content.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from pointlab import campaign as camp
from pointlab import evaluation as ev
from pointlab import formats, sampling, synth
from pointlab.domain import LabelMap, point_to_pixel
from pointlab.formats import FormatError

# readable region names for small synthetic dictionaries
_REGION_NAMES = [
    "sky", "grass", "water", "rock", "sand", "forest", "road", "building",
    "snow", "field", "gravel", "moss", "clay", "shrub", "ice", "mud",
]


def _class_names(c: int) -> list[str]:
    if c <= len(_REGION_NAMES):
        return _REGION_NAMES[:c]
    return _REGION_NAMES + [f"class_{i:03d}" for i in range(len(_REGION_NAMES), c)]


def _write_manifest(out_dir: Path, subcommand: str, options: dict) -> None:
    manifest = {"tool": "pointlab", "subcommand": subcommand, "options": options}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


_PALETTE = np.array(
    [
        [96, 153, 210], [106, 168, 82], [64, 111, 170], [128, 128, 120],
        [214, 193, 134], [44, 94, 51], [90, 90, 95], [176, 116, 86],
        [235, 240, 245], [189, 183, 107], [150, 141, 130], [86, 125, 70],
        [173, 123, 98], [103, 146, 103], [198, 226, 235], [110, 86, 70],
    ],
    dtype=np.uint8,
)


def _render_png(gt: LabelMap, path: Path, seed: int) -> None:
    """Photo-ish rendering of a label map: per-class base color plus seeded
    texture noise, so the UI has something less synthetic to show."""
    from PIL import Image

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF1D]))
    colors = _PALETTE[np.arange(gt.classes) % len(_PALETTE)]
    safe = np.where(gt.grid == 0xFFFF, 0, gt.grid).astype(np.int64)
    img = colors[safe].astype(np.int16)
    noise = rng.normal(0.0, 10.0, size=img.shape)
    img = np.clip(img + noise, 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


@click.group()
def cli() -> None:
    """Point-label campaigns over synthetic scenes."""


# ---------------------------------------------------------------------------


@cli.command("synth")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--scenes", type=int, default=4, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--classes", "classes_", type=int, default=6, show_default=True)
@click.option("--regions", type=int, default=10, show_default=True)
@click.option("--generator", type=click.Choice(synth.GENERATORS), default="voronoi")
@click.option("--models", type=int, default=1, show_default=True, help="score maps per image")
@click.option("--flip-rate", type=float, default=0.1, show_default=True)
@click.option("--jitter", type=float, default=0.0, show_default=True)
@click.option("--smoothing", type=int, default=0, show_default=True)
@click.option("--temperature", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth_cmd(
    out_dir: Path,
    scenes: int,
    width: int,
    height: int,
    classes_: int,
    regions: int,
    generator: str,
    models: int,
    flip_rate: float,
    jitter: float,
    smoothing: int,
    temperature: float,
    seed: int,
) -> None:
    """Generate a servable campaign directory of synthetic scenes."""
    if scenes < 1 or models < 1:
        raise click.UsageError("--scenes and --models must be >= 1")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "labelmaps").mkdir(exist_ok=True)
    (out_dir / "scoremaps").mkdir(exist_ok=True)
    (out_dir / "images").mkdir(exist_ok=True)

    names = _class_names(classes_)
    formats.write_class_dictionary(names, out_dir / "classes.csv")
    for i in range(scenes):
        image_id = f"scene_{i:04d}"
        spec = synth.SceneSpec(
            width=width,
            height=height,
            classes=classes_,
            region_count=regions,
            seed=seed + i,
            generator=generator,
        )
        gt, _ = synth.generate_scene(spec)
        formats.write_label_map(gt, out_dir / "labelmaps" / f"{image_id}.pgm")
        _render_png(gt, out_dir / "images" / f"{image_id}.png", seed=seed + i)
        for mi in range(models):
            deg = synth.DegradationSpec(
                boundary_jitter_px=jitter,
                flip_rate=flip_rate,
                smoothing_radius_px=smoothing,
                temperature=temperature,
                seed=seed * 1000 + i * 10 + mi,
            )
            sm = synth.degrade_to_scoremap(gt, deg)
            formats.write_score_map(sm, out_dir / "scoremaps" / f"{image_id}_m{mi}.scm")

    cfg = camp.CampaignConfig(strategy=sampling.StrategySpec(kind="uniform", seed=seed))
    camp.save_campaign_config(cfg, out_dir / "campaign.cfg")
    _write_manifest(
        out_dir,
        "synth",
        {
            "scenes": scenes, "width": width, "height": height, "classes": classes_,
            "regions": regions, "generator": generator, "models": models,
            "flip_rate": flip_rate, "jitter": jitter, "smoothing": smoothing,
            "temperature": temperature, "seed": seed,
        },
    )
    click.echo(f"wrote {scenes} scenes under {out_dir}")


# ---------------------------------------------------------------------------


def _load_world(data_dir: Path):
    from pointlab.service import load_campaign_dir

    config, records, scoremaps, names = load_campaign_dir(data_dir)
    gts = {
        r.image_id: formats.read_label_map(r.label_map_path, classes=len(names))
        for r in records
    }
    return config, records, scoremaps, gts, names


@cli.command("sample")
@click.option("--data-dir", type=click.Path(path_type=Path), required=True)
@click.option("--strategy", type=click.Choice(sampling.STRATEGIES), default="uniform")
@click.option("--n", type=int, default=10, show_default=True)
@click.option("--top-fraction", type=float, default=0.01, show_default=True)
@click.option("--band-low", type=float, default=0.8, show_default=True)
@click.option("--band-high", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def sample_cmd(
    data_dir: Path,
    strategy: str,
    n: int,
    top_fraction: float,
    band_low: float,
    band_high: float,
    seed: int,
    out_dir: Path,
) -> None:
    """Sample n points per image with a strategy; writes points.csv."""
    _, records, scoremaps, gts, _ = _load_world(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = sampling.StrategySpec(
        kind=strategy, top_fraction=top_fraction, band=(band_low, band_high), seed=seed
    )
    ensemble_needed = strategy in {"l2norm3m", "qbc3m", "entropy3m", "border3m"}
    lines = ["image_id,x,y,informative"]
    for r in records:
        maps = [formats.read_score_map(p) for p in r.score_map_paths] if ensemble_needed else [
            scoremaps[r.image_id]
        ]
        pts = sampling.select_points(spec, maps, n)
        gt = gts[r.image_id]
        pseudo = maps[0].pseudo_labels()
        for p in pts:
            row, col = point_to_pixel(p, gt.width, gt.height)
            informative = int(gt.grid[row, col]) != int(pseudo[row, col])
            lines.append(f"{r.image_id},{p.x:.6f},{p.y:.6f},{int(informative)}")
    (out_dir / "points.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        "sample",
        {
            "data_dir": str(data_dir), "strategy": strategy, "n": n,
            "top_fraction": top_fraction, "band": [band_low, band_high], "seed": seed,
        },
    )
    click.echo(f"wrote {out_dir / 'points.csv'}")


# ---------------------------------------------------------------------------


@cli.command("campaign")
@click.option("--data-dir", type=click.Path(path_type=Path), required=True)
@click.option("--simulate/--no-simulate", default=True, show_default=True)
@click.option("--ppi", type=int, default=None, help="points per image (default: campaign.cfg)")
@click.option("--replication", type=int, default=None)
@click.option("--max-rounds", type=int, default=None)
@click.option("--strategy", type=click.Choice(sampling.STRATEGIES), default=None)
@click.option("--epsilon", type=float, default=0.0, show_default=True, help="flip rate")
@click.option("--unsure", type=float, default=0.0, show_default=True)
@click.option("--annotators", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def campaign_cmd(
    data_dir: Path,
    simulate: bool,
    ppi: int | None,
    replication: int | None,
    max_rounds: int | None,
    strategy: str | None,
    epsilon: float,
    unsure: float,
    annotators: int,
    seed: int,
    out_dir: Path,
) -> None:
    """Run a simulated annotation campaign; writes labels, stats and cost."""
    from dataclasses import replace

    config, records, scoremaps, gts, _ = _load_world(data_dir)
    if ppi is not None:
        config = replace(config, ppi=ppi)
    if replication is not None:
        config = replace(config, replication=replication)
    if max_rounds is not None:
        config = replace(config, max_rounds=max_rounds)
    if strategy is not None:
        config = replace(config, strategy=replace(config.strategy, kind=strategy))
    config = replace(config, strategy=replace(config.strategy, seed=seed))
    out_dir.mkdir(parents=True, exist_ok=True)
    if not simulate:
        camp.save_campaign_config(config, data_dir / "campaign.cfg")
        click.echo(f"updated {data_dir / 'campaign.cfg'} for live serving")
        return

    log_path = out_dir / "answers.log"
    if log_path.exists():
        log_path.unlink()
    with formats.AnswerLogWriter(log_path) as w:
        state = camp.run_simulation(
            records,
            gts,
            scoremaps,
            config,
            error_rate=epsilon,
            unsure_rate=unsure,
            seed=seed,
            annotator_pool=annotators,
            log_writer=w,
        )
    rows = camp.aggregate(state)
    formats.write_point_labels(rows, out_dir / "point_labels.csv")
    cost = camp.campaign_cost(state)
    rstats = camp.round_stats(state)
    lines = [
        f"questions_asked={cost.questions_asked}",
        f"total_seconds={cost.total_seconds:.1f}",
        f"speedup_vs_polygons={'undefined' if cost.speedup_vs_polygons is None else f'{cost.speedup_vs_polygons:.3f}'}",
        f"points_total={rstats.points_total}",
        f"yes_points={rstats.yes_points}",
        f"mean_questions_per_yes={'undefined' if rstats.mean_questions_per_yes is None else f'{rstats.mean_questions_per_yes:.4f}'}",
        f"yes_within_3_rounds={rstats.fraction_yes_within(3):.4f}",
    ]
    (out_dir / "campaign_stats.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        "campaign",
        {
            "data_dir": str(data_dir), "ppi": config.ppi, "replication": config.replication,
            "max_rounds": config.max_rounds, "strategy": config.strategy.kind,
            "epsilon": epsilon, "unsure": unsure, "annotators": annotators, "seed": seed,
        },
    )
    click.echo(f"simulated campaign: {cost}")


# ---------------------------------------------------------------------------


@cli.command("eval")
@click.option("--frames", type=int, default=60, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--classes", "classes_", type=int, default=5, show_default=True)
@click.option("--regions", type=int, default=10, show_default=True)
@click.option("--methods", type=int, default=8, show_default=True)
@click.option("--ppi", type=int, default=50, show_default=True)
@click.option("--draws", type=int, default=5, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def eval_cmd(
    frames: int,
    width: int,
    height: int,
    classes_: int,
    regions: int,
    methods: int,
    ppi: int,
    draws: int,
    threads: int,
    seed: int,
    out_dir: Path,
) -> None:
    """Rank-preservation study: dense mIoU vs point mIoU over draws."""
    gts = {}
    for i in range(frames):
        gt, _ = synth.generate_scene(
            synth.SceneSpec(
                width=width, height=height, classes=classes_,
                region_count=regions, seed=seed + i,
            )
        )
        gts[f"frame_{i:05d}"] = gt
    family = synth.make_method_family(
        gts, synth.default_quality_ladder(methods, seed=seed)
    )
    report = ev.rank_study(
        family, gts, classes=classes_, ppi=ppi, draws=draws, seed=seed, threads=threads
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    ev.write_report(report, out_dir)
    _write_manifest(
        out_dir,
        "eval",
        {
            "frames": frames, "width": width, "height": height, "classes": classes_,
            "regions": regions, "methods": methods, "ppi": ppi, "draws": draws, "seed": seed,
        },
    )
    click.echo(report.summary_line())


# ---------------------------------------------------------------------------


@cli.command("stats")
@click.option("--labels", type=click.Path(path_type=Path), required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def stats_cmd(labels: Path, out_dir: Path) -> None:
    """Dataset statistics from a point_labels.csv."""
    rows = formats.read_point_labels(labels)
    st = ev.dataset_stats(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"rows={st.rows}",
        f"yes={st.yes}",
        f"no={st.no}",
        f"unresolved={st.unresolved}",
        f"labels_per_point={st.labels_per_point:.4f}",
        f"answers_per_label={st.answers_per_label:.4f}",
        f"classes_with_yes={st.classes_with_yes}",
        f"classes_with_3yes={st.classes_with_3yes}",
    ]
    (out_dir / "stats.txt").write_text("\n".join(lines) + "\n")
    zipf = ["rank,class_id,yes_count"]
    for rank, (cid, cnt) in enumerate(st.yes_per_class, start=1):
        zipf.append(f"{rank},{cid},{cnt}")
    (out_dir / "zipf.csv").write_text("\n".join(zipf) + "\n")
    _write_manifest(out_dir, "stats", {"labels": str(labels)})
    click.echo("\n".join(lines))


# ---------------------------------------------------------------------------


@cli.command("serve")
@click.option("--data-dir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8731, show_default=True)
@click.option("--fsync/--no-fsync", default=False, show_default=True)
def serve_cmd(data_dir: Path, host: str, port: int, fsync: bool) -> None:
    """Serve a campaign directory over HTTP."""
    from pointlab.service import serve

    serve(data_dir, host=host, port=port, fsync=fsync)


# ---------------------------------------------------------------------------


@cli.command("figdata")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--scenes", type=int, default=60, show_default=True)
@click.option("--frames", type=int, default=60, show_default=True)
@click.option("--methods", type=int, default=8, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--classes", "classes_", type=int, default=6, show_default=True)
@click.option("--draws", type=int, default=5, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def figdata_cmd(
    out_dir: Path,
    scenes: int,
    frames: int,
    methods: int,
    width: int,
    height: int,
    classes_: int,
    draws: int,
    threads: int,
    seed: int,
) -> None:
    """CSV inputs for the standard plots (rank histogram, dense-vs-point
    scatter, strategy complementarity, tau vs ppi, reconstruction curve)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))

    # -- class-rank histogram: where does the true class sit in M's ranking?
    rank_counts: dict[int, int] = {}
    total_pts = 0
    deg = synth.DegradationSpec(flip_rate=0.1, temperature=0.5, seed=seed)
    for i in range(scenes):
        gt, labels = synth.generate_scene(
            synth.SceneSpec(width=width, height=height, classes=classes_, region_count=10, seed=seed + i)
        )
        sm = synth.degrade_to_scoremap(gt, synth.DegradationSpec(
            flip_rate=0.1, temperature=0.5, seed=seed + 7000 + i))
        pts = sampling.select_points(
            sampling.StrategySpec(kind="uniform", seed=seed + i), sm, 10
        )
        for p in pts:
            ranking = camp.ranked_classes(sm, p, labels)
            truth = gt.label_at(p)
            if truth in ranking:
                r = ranking.index(truth) + 1
                rank_counts[r] = rank_counts.get(r, 0) + 1
                total_pts += 1
    lines = ["rank,count,fraction"]
    for r in sorted(rank_counts):
        lines.append(f"{r},{rank_counts[r]},{rank_counts[r] / total_pts:.6f}")
    (out_dir / "class_rank_hist.csv").write_text("\n".join(lines) + "\n")

    # -- shared method family for the scatter and tau curves
    gts = {}
    for i in range(frames):
        gt, _ = synth.generate_scene(
            synth.SceneSpec(width=width, height=height, classes=classes_, region_count=10, seed=seed + 500 + i)
        )
        gts[f"frame_{i:05d}"] = gt
    family = synth.make_method_family(gts, synth.default_quality_ladder(methods, seed=seed))

    scatter = ["method_id,draw,dense_miou,point_miou"]
    tau_lines = ["ppi,draw,tau"]
    for ppi in (1, 5, 10, 50):
        report = ev.rank_study(
            family, gts, classes=classes_, ppi=ppi, draws=draws, seed=seed + ppi, threads=threads
        )
        for d, t in enumerate(report.taus):
            tau_lines.append(f"{ppi},{d},{t:.6f}")
        if ppi == 50:
            for d, pm in enumerate(report.point_miou):
                for mid in report.method_ids:
                    scatter.append(
                        f"{mid},{d},{report.dense_miou[mid]:.6f},{pm[mid]:.6f}"
                    )
    (out_dir / "dense_vs_point.csv").write_text("\n".join(scatter) + "\n")
    (out_dir / "tau_vs_ppi.csv").write_text("\n".join(tau_lines) + "\n")

    # -- strategy complementarity at 10 ppi
    comp: dict[str, list[float]] = {s: [] for s in ("uniform", "entropy", "border", "score_band")}
    for i in range(scenes):
        gt, _ = synth.generate_scene(
            synth.SceneSpec(width=width, height=height, classes=classes_, region_count=10, seed=seed + 9000 + i)
        )
        sm = synth.degrade_to_scoremap(
            gt,
            synth.DegradationSpec(
                boundary_jitter_px=2.5, flip_rate=0.02, smoothing_radius_px=2,
                temperature=0.5, seed=seed + 11000 + i,
            ),
        )
        for strat in comp:
            pts = sampling.select_points(
                sampling.StrategySpec(kind=strat, seed=seed + i), sm, 10
            )
            try:
                comp[strat].append(sampling.complementarity_fraction(pts, gt, sm))
            except ValueError:
                pass
    lines = ["strategy,mean_fraction,ci95_low,ci95_high,scenes"]
    for strat, vals in comp.items():
        arr = np.array(vals)
        se = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
        lines.append(
            f"{strat},{arr.mean():.6f},{arr.mean() - 1.96 * se:.6f},{arr.mean() + 1.96 * se:.6f},{len(arr)}"
        )
    (out_dir / "strategy_complementarity.csv").write_text("\n".join(lines) + "\n")

    # -- reconstruction curve
    rec_lines = ["ppi,mean_miou,ci95_low,ci95_high,scenes"]
    rec_gts = []
    for i in range(scenes):
        gt, _ = synth.generate_scene(
            synth.SceneSpec(width=width, height=height, classes=classes_, region_count=10, seed=seed + 13000 + i)
        )
        rec_gts.append(gt)
    for ppi in (1, 5, 10, 50):
        vals = []
        for i, gt in enumerate(rec_gts):
            draw_rng = np.random.default_rng(np.random.SeedSequence([seed, 17, ppi, i]))
            labeled = ev.uniform_labeled_points(gt, f"s{i}", ppi, draw_rng)
            rec = ev.reconstruct_dense(
                [(lp.point, lp.class_id) for lp in labeled], gt.width, gt.height, classes=gt.classes
            )
            vals.append(ev.dense_miou({"s": rec}, {"s": gt}, gt.classes).miou)
        arr = np.array(vals)
        se = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
        rec_lines.append(
            f"{ppi},{arr.mean():.6f},{arr.mean() - 1.96 * se:.6f},{arr.mean() + 1.96 * se:.6f},{len(arr)}"
        )
    (out_dir / "reconstruction_curve.csv").write_text("\n".join(rec_lines) + "\n")

    _write_manifest(
        out_dir,
        "figdata",
        {
            "scenes": scenes, "frames": frames, "methods": methods, "width": width,
            "height": height, "classes": classes_, "draws": draws, "seed": seed,
        },
    )
    click.echo(f"wrote figure data under {out_dir}")


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    """Run the CLI, mapping failures onto documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.Abort:
        return 1
    except FormatError as e:
        click.echo(f"validation error: {e}", err=True)
        return 3
    except FileNotFoundError as e:
        click.echo(f"i/o error: {e}", err=True)
        return 2
    except OSError as e:
        click.echo(f"i/o error: {e}", err=True)
        return 2
    except (ValueError, RuntimeError) as e:
        click.echo(f"validation error: {e}", err=True)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
