"""Command-line entry point: ``dawsol <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 dataset error,
4 training aborted on a non-finite loss, 5 checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigError, RunConfig, ValidationError, config_from_mapping, load_config, save_config

SUBCOMMANDS = ("generate-synthetic", "train", "evaluate", "visualize", "ablate", "dump-cache")

ABLATION_ROWS = {
    # name: (overrides, L_c, L_d, L_u, TSA)
    "cam": ({"lambda1": 0.0, "lambda2": 0.0}, True, False, False, False),
    "ld": ({"lambda2": 0.0, "use_tsa": False}, True, True, False, False),
    "ld_tsa": ({"lambda2": 0.0}, True, True, False, True),
    "lu_tsa": ({"lambda1": 0.0}, True, False, True, True),
    "full": ({}, True, True, True, True),
}

OVERLAY_COLORMAP = "jet"
OVERLAY_ALPHA = 0.5
BOX_COLOR = (255, 0, 0)

EXIT_USAGE, EXIT_DATA, EXIT_ABORT, EXIT_CHECKPOINT = 2, 3, 4, 5


@dataclass
class CommandSpec:
    subcommand: str
    config_path: Optional[Path]
    overrides: dict
    out_dir: Optional[Path]
    options: dict = field(default_factory=dict)

    def run_config(self) -> RunConfig:
        base = load_config(self.config_path) if self.config_path else RunConfig()
        merged = {**base.to_dict(), **self.overrides}
        return config_from_mapping(merged)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dawsol", description="Weakly supervised localization as domain adaptation")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", type=Path, required=needs_out, help="output directory")

    p = sub.add_parser("generate-synthetic", help="write the synthetic shapes dataset")
    common(p)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--test", type=int, default=300)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--noise", type=float, default=0.2)

    p = sub.add_parser("train", help="train a model and evaluate it on the test split")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-split", default="test")

    p = sub.add_parser("evaluate", help="compute localization metrics")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset root holding the annotations")
    p.add_argument("--split", default="test")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--predictions", type=Path, help="folder of <image_id>.npy (K, H, W) maps")
    p.add_argument("--save-maps", action="store_true", help="with --checkpoint: also write the maps to OUT/maps")

    p = sub.add_parser("visualize", help="render CAM overlays with the extracted box")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--threshold", type=float, help="box threshold in [0, 1]; default is the GT-known threshold stored in the checkpoint")
    p.add_argument("images", nargs="+", type=Path)

    p = sub.add_parser("ablate", help="train the ablation rows and tabulate pIoU / PxAP")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--rows", default=",".join(ABLATION_ROWS), help="comma list from " + ",".join(ABLATION_ROWS))

    p = sub.add_parser("dump-cache", help="print the anchor cache of a checkpoint as CSV")
    common(p, needs_out=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def parse_args(argv) -> CommandSpec:
    """Parse and validate; argparse exits with status 2 on usage errors."""
    ns = _build_parser().parse_args(argv)
    overrides = {}
    for item in ns.overrides:
        if "=" not in item:
            raise ValidationError(item, "overrides must look like key=value")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if ns.seed is not None:
        overrides["seed"] = ns.seed
    config_from_mapping(overrides)  # rejects unknown keys and bad values early
    options = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config", "overrides", "out", "seed")}
    if ns.subcommand == "ablate":
        rows = [r.strip() for r in ns.rows.split(",") if r.strip()]
        for r in rows:
            if r not in ABLATION_ROWS:
                raise ValidationError("rows", f"unknown ablation row {r!r}")
        options["rows"] = rows
    return CommandSpec(ns.subcommand, ns.config, overrides, ns.out, options)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def run_generate(spec: CommandSpec) -> dict:
    from .data import SyntheticSpec, generate_synthetic

    o = spec.options
    splits = {"train": o["train"], "test": o["test"]}
    if o["val"]:
        splits["val"] = o["val"]
    seed = int(spec.overrides.get("seed", 0))
    generate_synthetic(SyntheticSpec(splits=splits, image_size=o["image_size"], noise=o["noise"], seed=seed),
                       spec.out_dir)
    return {"out": str(spec.out_dir), "splits": splits, "seed": seed}


def run_train(spec: CommandSpec) -> dict:
    from .trainer import run_training

    config = spec.run_config()
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, spec.out_dir / "config.cfg")
    return run_training(config, spec.options["data"], spec.out_dir, spec.options["eval_split"])


def _write_eval(out_dir: Path, summary: dict, curves: dict) -> None:
    from .metrics import curves_to_csv

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out_dir / "curves.csv").write_text(curves_to_csv(curves))


def run_evaluate(spec: CommandSpec) -> dict:
    from .data import load_annotation, load_manifest
    from .metrics import EvalRecord, ThresholdSweep, evaluate_records
    from .trainer import evaluate, load_checkpoint, predict

    o = spec.options
    if o["checkpoint"] is not None:
        state = load_checkpoint(o["checkpoint"])
        manifest = load_manifest(o["data"], o["split"], state.config.num_classes)
        summary, curves = evaluate(state, manifest, return_curves=True)
        if o["save_maps"]:
            from .data import load_image

            maps_dir = spec.out_dir / "maps"
            maps_dir.mkdir(parents=True, exist_ok=True)
            images = np.stack([load_image(e.image_path, state.config.image_size) for e in manifest.entries])
            maps, preds = predict(state, images)
            for e, m in zip(manifest.entries, maps):
                np.save(maps_dir / f"{e.image_id}.npy", m)
            _write_predictions_csv(maps_dir / "predictions.csv", [e.image_id for e in manifest.entries], preds)
    else:
        manifest = load_manifest(o["data"], o["split"])
        preds = _read_predictions_csv(o["predictions"] / "predictions.csv")
        records = []
        for e in manifest.entries:
            path = o["predictions"] / f"{e.image_id}.npy"
            if not path.exists():
                raise FileNotFoundError(f"no prediction for {e.image_id} in {o['predictions']}")
            maps = np.load(path)
            ann = load_annotation(e)
            score = maps[ann.class_id] if maps.ndim == 3 else maps
            records.append(EvalRecord(e.image_id, score.astype(np.float64), preds.get(e.image_id, ann.class_id), ann))
        summary, curves = evaluate_records(records, ThresholdSweep.uniform(spec.run_config().num_thresholds))
    _write_eval(spec.out_dir, summary, curves)
    return summary


def _write_predictions_csv(path: Path, ids, preds) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "pred_class"])
        w.writerows(zip(ids, (int(p) for p in preds)))


def _read_predictions_csv(path: Path) -> dict:
    if not path.exists():
        return {}
    with path.open(newline="") as fh:
        return {row["image_id"]: int(row["pred_class"]) for row in csv.DictReader(fh)}


def render_overlay(image: np.ndarray, score_map: np.ndarray, box) -> np.ndarray:
    """uint8 (H, W, 3) heat overlay of a [0, 1] map on a float (3, H, W) image, box outlined."""
    from matplotlib import colormaps
    from PIL import Image, ImageDraw

    heat = colormaps[OVERLAY_COLORMAP](score_map)[..., :3]
    blend = (1 - OVERLAY_ALPHA) * image.transpose(1, 2, 0) + OVERLAY_ALPHA * heat
    canvas = Image.fromarray((np.clip(blend, 0, 1) * 255 + 0.5).astype(np.uint8))
    if box is not None:
        ImageDraw.Draw(canvas).rectangle(list(box), outline=BOX_COLOR, width=1)
    return np.asarray(canvas)


def run_visualize(spec: CommandSpec) -> dict:
    from PIL import Image

    from .data import load_image
    from .metrics import mask_to_box, threshold_map
    from .trainer import load_checkpoint, predict

    o = spec.options
    state = load_checkpoint(o["checkpoint"])
    tau = o["threshold"]
    if tau is None:
        tau = state.extra.get("eval", {}).get("gt_known_threshold", 0.5)
    if not 0 <= tau <= 1:
        raise ValidationError("threshold", "must lie in [0, 1]")
    paths = []
    for p in o["images"]:
        paths.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    images = np.stack([load_image(p, state.config.image_size) for p in paths])
    maps, preds = predict(state, images)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path, image, m, k in zip(paths, images, maps, preds):
        score = m[int(k)]
        box = mask_to_box(threshold_map(score, tau))
        target = spec.out_dir / f"{path.stem}_cam.png"
        Image.fromarray(render_overlay(image, score, box)).save(target, format="PNG")
        written.append({"file": str(target), "class": int(k), "box": box})
    return {"threshold": tau, "overlays": written}


def run_ablate(config: RunConfig, data_root, rows, out_dir) -> list:
    """Train every requested ablation row with the shared seed; writes ``ablation.csv``."""
    from .trainer import run_training

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for name in rows:
        overrides, lc, ld, lu, tsa = ABLATION_ROWS[name]
        row_cfg = config.replace(**overrides)
        result = run_training(row_cfg, data_root, out_dir / name)
        ev = result.get("eval", {})
        table.append({"row": name, "l_c": int(lc), "l_d": int(ld), "l_u": int(lu), "tsa": int(tsa),
                      "uda": row_cfg.uda_method, "piou": ev.get("piou"), "pxap": ev.get("pxap")})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(table)
    (out_dir / "ablation.csv").write_text(buf.getvalue())
    return table


def run_dump_cache(spec: CommandSpec) -> str:
    from .trainer import load_checkpoint

    text = load_checkpoint(spec.options["checkpoint"]).cache.to_csv()
    if spec.out_dir:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        (spec.out_dir / "cache.csv").write_text(text)
    return text


def main(argv=None) -> int:
    from .data import DatasetError
    from .trainer import CheckpointError, TrainingAborted

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        spec = parse_args(sys.argv[1:] if argv is None else argv)
        if spec.subcommand == "generate-synthetic":
            result = run_generate(spec)
        elif spec.subcommand == "train":
            result = run_train(spec)
        elif spec.subcommand == "evaluate":
            result = run_evaluate(spec)
        elif spec.subcommand == "visualize":
            result = run_visualize(spec)
        elif spec.subcommand == "ablate":
            result = run_ablate(spec.run_config(), spec.options["data"], spec.options["rows"], spec.out_dir)
        else:
            sys.stdout.write(run_dump_cache(spec))
            return 0
    except (ConfigError, ValidationError) as exc:
        print(f"dawsol: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"dawsol: dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"dawsol: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except CheckpointError as exc:
        print(f"dawsol: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
