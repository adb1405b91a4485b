"""Command line entry point.

Subcommands: mine (detections + frames -> pseudo-dataset + report), genvideo
(still images -> generated videos + manifests), simulate (matching-strategy
comparison on synthetic scenes) and render (QC overlays). A JSON config file
provides defaults; command line flags win. Every output embeds the full run
configuration so runs can be reproduced byte for byte.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dataset_io, figures, genloop, sim
from .dataset_io import MissingFrame, ParseError
from .geometry import DegenerateGeometry
from .tmm import MiningConfig, OutOfOrderFrame, mine_video
from .tracker import TrackerConfig, TemplateMatchTracker, TrackerContract

log = logging.getLogger("trajmine")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "tmm": {
        "theta_iou": 0.5,
        "n_ctx": 2,
        "max_gap": 1,
        "min_traj_len": 5,
        "min_det_count": 2,
        "min_det_ratio": 0.3,
        "max_missed": 2,
        "max_track_run": 8,
        "matching": "mutual-best",
    },
    "tracker": {
        "margin": 1.0,
        "min_margin_px": 16.0,
        "tau_track": 0.6,
        "max_template_age": 10,
    },
    "genloop": {
        "mode": "loop",
        "n_unique": 17,
        "t_cap": 50,
        "theta_range": [-15.0, 15.0],
        "delta_range": [0.8, 1.25],
        "center_jitter": 0.1,
        "fill": 128,
    },
    "sim": {
        "n_instances": 2,
        "n_frames": 24,
        "canvas": [320, 240],
        "box_size": [40.0, 20.0],
        "speed": 3.0,
        "crossing": True,
        "n_seeds": 100,
        "p_miss": 0.2,
        "jitter_sigma": 0.0,
        "score_base": 0.95,
        "score_sigma": 0.0,
        "p_false": 0.0,
    },
}


def _deep_merge(base, override):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def load_run_config(args):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config}: invalid JSON ({exc.msg})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {args.config}: top level must be an object")
        _deep_merge(cfg, user)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "theta_iou", None) is not None:
        cfg["tmm"]["theta_iou"] = args.theta_iou
    if getattr(args, "matching", None) is not None:
        cfg["tmm"]["matching"] = args.matching
    if getattr(args, "mode", None) is not None:
        cfg["genloop"]["mode"] = args.mode
    return cfg


def _mining_config(cfg):
    try:
        return MiningConfig(**cfg["tmm"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tmm config: {exc}") from exc


def _tracker_config(cfg):
    try:
        return TrackerConfig(**cfg["tracker"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tracker config: {exc}") from exc


def _meta(cfg, **extra):
    meta = {"tool": "trajmine", "version": __version__, "config": cfg}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# mine

def cmd_mine(args, cfg):
    if not args.detections:
        raise ConfigError("mine requires --detections")
    if not args.out:
        raise ConfigError("mine requires --out")
    records = list(dataset_io.read_detections(args.detections))
    videos = dataset_io.group_by_video(records)

    frames_source = None
    tracker = TrackerContract()  # no tracking without frames
    if args.frames:
        frames_source = dataset_io.read_frames(args.frames)
        tracker = TemplateMatchTracker(_tracker_config(cfg))

    if isinstance(frames_source, dataset_io.ManifestFrames):
        if len(videos) != 1:
            raise ConfigError(
                f"a genloop manifest holds one video, stream has {len(videos)}"
            )
        video_id, pairs = next(iter(videos.items()))
        by_unique = {fi: dets for fi, dets in pairs}
        videos = {video_id: dataset_io.broadcast_detections(frames_source.manifest, by_unique)}

    mcfg = _mining_config(cfg)
    jobs = max(1, int(cfg.get("jobs", 1)))

    def mine_one(video_id):
        log.info("mining video %s (%d frames)", video_id, len(videos[video_id]))
        return mine_video(video_id, videos[video_id], tracker, mcfg, frames=frames_source)

    order = sorted(videos)
    if jobs == 1 or len(order) <= 1:
        results = [mine_one(v) for v in order]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(mine_one, order))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_frames = [pf for r in results for pf in r.pseudo_frames]
    meta = _meta(cfg, detections=str(args.detections),
                 frames=str(args.frames) if args.frames else None,
                 videos=order)
    dataset_io.write_pseudo_dataset(all_frames, meta, out / "pseudo_dataset.json")

    report = {
        "meta": meta,
        "videos": [{"video_id": r.video_id, **r.counts} for r in results],
        "totals": {
            key: sum(r.counts[key] for r in results)
            for key in (results[0].counts if results else {})
        },
    }
    dataset_io.write_json(out / "report.json", report)
    figures.save_mining_report_figure(report, out / "report.png")

    totals = report["totals"]
    print(f"mined {len(order)} video(s): "
          f"{totals.get('n_trajectories', 0)} trajectories, "
          f"{totals.get('n_hard_positives', 0)} hard positives, "
          f"{totals.get('n_hard_negatives', 0)} hard negatives, "
          f"{totals.get('n_admitted_frames', 0)} admitted frames")
    print(f"wrote {out / 'pseudo_dataset.json'}")
    return 0


# ---------------------------------------------------------------------------
# genvideo

def _loop_spec(cfg, seed):
    g = cfg["genloop"]
    try:
        return genloop.LoopSpec(
            mode=g["mode"],
            n_unique=int(g["n_unique"]),
            t_cap=int(g["t_cap"]),
            theta_range=tuple(g["theta_range"]),
            delta_range=tuple(g["delta_range"]),
            center_jitter=float(g["center_jitter"]),
            fill=int(g["fill"]),
            seed=seed,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"genloop config: {exc}") from exc


def cmd_genvideo(args, cfg):
    if not args.frames:
        raise ConfigError("genvideo requires --frames (source image file or directory)")
    if not args.out:
        raise ConfigError("genvideo requires --out")
    src = Path(args.frames)
    if src.is_dir():
        images = sorted(p for p in src.iterdir()
                        if p.suffix.lower() in dataset_io.IMAGE_EXTS)
        if not images:
            raise FileNotFoundError(f"no images found in {src}")
    elif src.is_file():
        images = [src]
    else:
        raise FileNotFoundError(f"source {src} does not exist")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = int(cfg["seed"])

    def generate_one(img_path):
        image = dataset_io.load_image(img_path)
        h, w = image.shape[:2]
        # stable per-image stream: base seed + image-name hash
        spec = _loop_spec(cfg, base_seed)
        rng = np.random.default_rng([base_seed, zlib.crc32(img_path.stem.encode())])
        params = genloop.sample_transform(spec, rng, (w, h))
        schedule = genloop.build_frame_schedule(spec)
        frames = genloop.render_frames(image, params, schedule, fill=spec.fill)
        frame_dir = out / img_path.stem
        frame_dir.mkdir(exist_ok=True)
        files = []
        for k, frame in enumerate(frames):
            name = f"{k:06d}.png"
            dataset_io.save_image(frame_dir / name, frame)
            files.append(f"{img_path.stem}/{name}")
        manifest_path = out / f"{img_path.stem}.manifest.json"
        dataset_io.write_genloop_manifest(manifest_path, img_path.name, params,
                                          schedule, files)
        return manifest_path, len(frames), len(schedule)

    jobs = max(1, int(cfg.get("jobs", 1)))
    if jobs == 1 or len(images) <= 1:
        outputs = [generate_one(p) for p in images]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(generate_one, images))

    for manifest_path, n_unique, n_emitted in outputs:
        print(f"{manifest_path}: {n_unique} unique frames, emitted length {n_emitted}")
    return 0


# ---------------------------------------------------------------------------
# simulate

def _sim_specs(cfg):
    s = cfg["sim"]
    try:
        scene = sim.SceneSpec(
            n_instances=int(s["n_instances"]),
            n_frames=int(s["n_frames"]),
            canvas=tuple(s["canvas"]),
            box_size=tuple(s["box_size"]),
            speed=float(s["speed"]),
            crossing=bool(s["crossing"]),
            seed=int(cfg["seed"]),
        )
        noise = sim.NoiseSpec(
            p_miss=float(s["p_miss"]),
            jitter_sigma=float(s["jitter_sigma"]),
            score_base=float(s["score_base"]),
            score_sigma=float(s["score_sigma"]),
            p_false=float(s["p_false"]),
        )
        n_seeds = int(s["n_seeds"])
        if n_seeds < 1:
            raise ConfigError("sim.n_seeds must be >= 1")
        return scene, noise, n_seeds
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"sim config: {exc}") from exc


def cmd_simulate(args, cfg):
    if not args.out:
        raise ConfigError("simulate requires --out")
    scene, noise, n_seeds = _sim_specs(cfg)
    mcfg = _mining_config(cfg)
    seeds = range(int(cfg["seed"]), int(cfg["seed"]) + n_seeds)
    rows = sim.compare_strategies(scene, noise, mcfg, seeds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys()) if rows else ["seed", "strategy"]
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)

    summary = {}
    for strategy in ("mutual-best", "greedy"):
        vals = [r for r in rows if r["strategy"] == strategy]
        summary[strategy] = {
            key: float(np.mean([r[key] for r in vals]))
            for key in ("purity", "hp_precision", "hp_recall", "hn_precision",
                        "pseudo_noise_rate")
        }
    report = {"meta": _meta(cfg), "n_seeds": n_seeds, "summary": summary}
    dataset_io.write_json(out / "report.json", report)
    figures.save_strategy_figure(rows, out / "purity.png")

    for strategy, stats in summary.items():
        print(f"{strategy}: mean purity {stats['purity']:.4f}, "
              f"hp P/R {stats['hp_precision']:.3f}/{stats['hp_recall']:.3f}, "
              f"noise rate {stats['pseudo_noise_rate']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# render

def cmd_render(args, cfg):
    if not args.dataset:
        raise ConfigError("render requires --dataset (a pseudo-dataset file)")
    if not args.frames or not args.out:
        raise ConfigError("render requires --frames and --out")
    doc = dataset_io.read_pseudo_dataset(args.dataset)
    frames_source = dataset_io.read_frames(args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry in doc.get("frames", []):
        image = frames_source[entry["frame_index"]]
        overlay = dataset_io.render_overlay(
            image, entry.get("labels", []), entry.get("hard_negatives", []))
        name = f"{entry['video_id']}_{entry['frame_index']:06d}.png"
        dataset_io.save_image(out / name, overlay)
        written += 1
    print(f"wrote {written} overlay(s) to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="trajmine",
        description="Mine hard examples with pseudo-labels from videos by "
                    "fusing detections with template tracking.",
    )
    parser.add_argument("--version", action="version", version=f"trajmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--detections", help="line-delimited detection stream")
        p.add_argument("--frames", help="frame directory, genloop manifest, or source images")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None, help="worker pool size")
        p.add_argument("--theta-iou", type=float, default=None, dest="theta_iou")
        p.add_argument("--mode", choices=genloop.MODES, default=None,
                       help="genvideo schedule mode")
        p.add_argument("--matching", choices=("mutual-best", "greedy"), default=None)
        return p

    p_mine = common(sub.add_parser("mine", help="mine a pseudo-dataset from detections"))
    p_mine.set_defaults(func=cmd_mine)
    p_gen = common(sub.add_parser("genvideo", help="synthesize videos from still images"))
    p_gen.set_defaults(func=cmd_genvideo)
    p_sim = common(sub.add_parser("simulate", help="compare matching strategies on synthetic scenes"))
    p_sim.set_defaults(func=cmd_simulate)
    p_render = common(sub.add_parser("render", help="render QC overlays for a pseudo-dataset"))
    p_render.add_argument("--dataset", help="pseudo-dataset JSON from mine")
    p_render.set_defaults(func=cmd_render)
    return parser


def _configure_logging():
    level = os.environ.get("TRAJMINE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        log.error("io error: %s", exc)
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, MissingFrame, OutOfOrderFrame, DegenerateGeometry,
            genloop.ScheduleTooLong, sim.InfeasibleSpec, ValueError) as exc:
        log.error("data error: %s", exc)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
