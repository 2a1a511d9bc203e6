"""Command-line surface for the pipeline.

Every subcommand reads its declared inputs, writes its declared outputs
plus a manifest, and exits 0 on success or with a category code on
failure: 1 configuration, 2 I/O or malformed files, 3 numeric failure.
Logs go to standard error; data goes to files, or to standard output only
where "-" is accepted.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (AggregationSpec, LamKernel, phi_pairs, refine_labels,
                        write_refinement_manifest)
from .config import ConfigError, PipelineConfig, load_config
from .errors import FileFormatError
from .geometry import load_point_cloud_bin, load_poses, project_to_range_image, save_point_cloud_bin
from .lam import (LamTrainingError, load_lam_params, modulate_statistics, save_lam_params,
                  train_lam, weight_histograms, write_histogram_csv, write_loss_trace_csv)
from .metrics import (condense_static_dynamic, confusion, iou, write_confusion_csv,
                      write_iou_csv, write_iou_summary)
from .neighbors import SpatialIndex, build_dense_cloud, precompute_neighborhoods
from .selftrain import (LidarSequence, PrecomputedPredictor, build_lam_training_set,
                        cbst_select, file_checksum, generate_refined_predictions, load_labels,
                        mock_predictor, noop_student_hook, run_adaptation, save_labels,
                        save_selection_mask, write_manifest, _iteration_seed)
from .subsample import (apply_row_mask, read_prediction_matrix, row_mask, within_frame_ensemble,
                        write_prediction_matrix)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

INDEX_MAGIC = b"LIDX"

log = logging.getLogger("lidar_ensemble")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Dataset plumbing
# ---------------------------------------------------------------------------

def _scan_paths(cfg: PipelineConfig):
    paths = sorted(cfg.scans_dir.glob("*.bin"))
    if not paths:
        raise ConfigError(f"dataset.scans: no .bin files under {cfg.scans_dir}")
    return paths


def _load_sequence(cfg: PipelineConfig):
    paths = _scan_paths(cfg)
    scans = [load_point_cloud_bin(p, frame_id=i) for i, p in enumerate(paths)]
    poses = load_poses(cfg.poses_path)
    if len(poses) < len(scans):
        raise ConfigError(f"dataset.poses: {len(poses)} poses for {len(scans)} scans")
    truths = None
    if cfg.labels_dir is not None:
        label_paths = sorted(cfg.labels_dir.glob("*.label"))
        if len(label_paths) == len(scans):
            truths = [load_labels(p) for p in label_paths]
    return LidarSequence(name="sequence", scans=scans, poses=poses[: len(scans)]), truths, paths


def _predictor_from_config(cfg: PipelineConfig):
    spec = cfg.predictor
    kind = spec["kind"].strip()
    if kind == "mock_height":
        thresholds = tuple(float(tok) for tok in spec["thresholds"].split(",") if tok.strip())
        base = mock_predictor("height_threshold", thresholds=thresholds)
    elif kind == "mock_bands":
        base = mock_predictor("radial_bands", band_width=float(spec["band_width"]),
                              num_classes=int(spec["num_classes"]))
    elif kind == "precomputed":
        directory = spec["directory"].strip()
        if not directory:
            raise ConfigError("predictor.directory: required for kind = precomputed")
        if cfg.subsample.trials != 1:
            raise ConfigError(
                "subsample.trials: stored predictions only cover full frames; "
                "use trials = 1 with kind = precomputed")
        return PrecomputedPredictor(cfg.root / directory, int(spec["num_classes"]))
    else:
        raise ConfigError(f"predictor.kind: unknown kind {kind!r}")
    near, far, gate = spec["near_noise"].strip(), spec["far_noise"].strip(), spec["range_threshold"].strip()
    if near or far or gate:
        if not (near and far and gate):
            raise ConfigError("predictor: near_noise, far_noise, and range_threshold must be set together")
        return mock_predictor("range_gated_noisy", base=base, near_rate=float(near),
                              far_rate=float(far), range_threshold=float(gate), seed=cfg.seed)
    noise = float(spec["noise"])
    if noise > 0:
        return mock_predictor("noisy", base=base, flip_rate=noise, seed=cfg.seed)
    return base


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("LIDAR_ENSEMBLE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"LIDAR_ENSEMBLE_THREADS: {exc}") from exc
    return os.cpu_count() or 1


def _command_manifest(out_dir: Path, cfg: PipelineConfig | None, args, inputs=(), extra=()):
    items = [("tool", "lidar-ensemble"), ("version", __version__), ("command", args.command)]
    if cfg is not None:
        items += [("seed", str(cfg.seed))] + cfg.manifest_items()
    items += list(extra)
    for path in inputs:
        items.append((f"input.{Path(path).name}", file_checksum(path)))
    write_manifest(out_dir / "manifest.txt", items)


def _phi_stream(seq: LidarSequence, within, agg: AggregationSpec):
    """Per-frame feature rows plus per-frame query offsets for analysis."""
    pairs = list(zip(seq.scans, within))
    chunks, queries = [], []
    for t in range(len(seq.scans)):
        dense = build_dense_cloud(pairs, seq.poses, t, agg.window, agg.stride)
        nbh = precompute_neighborhoods(SpatialIndex(dense.points), seq.scans[t].points, agg.k, agg.epsilon)
        rows, row_query, _ = phi_pairs(seq.scans[t].points, within[t].probs, dense, nbh)
        chunks.append(rows)
        queries.append(row_query)
    return chunks, queries


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_project(args) -> int:
    cfg = load_config(args.config)
    paths = _scan_paths(cfg)
    if not (0 <= args.frame < len(paths)):
        raise ConfigError(f"--frame {args.frame} outside dataset of {len(paths)} scans")
    cloud = load_point_cloud_bin(paths[args.frame], frame_id=args.frame)
    index = project_to_range_image(cloud, cfg.sensor)
    lines = ["point,u,v,range"]
    for i in range(len(cloud)):
        u, v = index.pixel_of_point[i]
        lines.append(f"{i},{u},{v},{index.range_of_point[i].item()!r}")
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _command_manifest(out.parent, cfg, args, inputs=[paths[args.frame]],
                          extra=[("frame", str(args.frame)), ("output", out.name)])
    return EXIT_OK


def cmd_subsample(args) -> int:
    cfg = load_config(args.config)
    paths = _scan_paths(cfg)
    if not (0 <= args.frame < len(paths)):
        raise ConfigError(f"--frame {args.frame} outside dataset of {len(paths)} scans")
    cloud = load_point_cloud_bin(paths[args.frame], frame_id=args.frame)
    index = project_to_range_image(cloud, cfg.sensor)
    rng = np.random.default_rng(cfg.seed)
    mask = row_mask(cfg.sensor, cfg.subsample, rng)
    sub, parent = apply_row_mask(cloud, index, mask)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_point_cloud_bin(sub, out_dir / f"{args.frame:06d}.bin")
    with open(out_dir / f"{args.frame:06d}.lidx", "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(np.uint32(len(parent)).tobytes())
        fh.write(parent.astype("<u4").tobytes())
    _command_manifest(out_dir, cfg, args, inputs=[paths[args.frame]],
                      extra=[("frame", str(args.frame)),
                             ("kept_points", str(len(sub))),
                             ("kept_rows", str(int(mask.keep.sum())))])
    log.info("kept %d of %d points (%d rows)", len(sub), len(cloud), int(mask.keep.sum()))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    predictions = [read_prediction_matrix(p) for p in args.inputs]
    merged = within_frame_ensemble(predictions, args.parent_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_prediction_matrix(merged, out)
    _command_manifest(out.parent, None, args, inputs=args.inputs,
                      extra=[("parent_size", str(args.parent_size)), ("output", out.name)])
    return EXIT_OK


def _refine_sequence_from_files(cfg: PipelineConfig, seq: LidarSequence, pred_dir: Path,
                                agg: AggregationSpec, out_dir: Path):
    within = []
    for t in range(len(seq.scans)):
        pred = read_prediction_matrix(pred_dir / f"{t:06d}.lprb")
        if len(pred) != len(seq.scans[t]):
            raise FileFormatError(
                f"{pred_dir / f'{t:06d}.lprb'}: {len(pred)} rows for a {len(seq.scans[t])}-point scan")
        within.append(pred)
    pairs = list(zip(seq.scans, within))
    refined_dir = out_dir / "refined"
    refined_dir.mkdir(parents=True, exist_ok=True)
    for t in range(len(seq.scans)):
        dense = build_dense_cloud(pairs, seq.poses, t, agg.window, agg.stride)
        nbh = precompute_neighborhoods(SpatialIndex(dense.points), seq.scans[t].points, agg.k, agg.epsilon)
        refined = refine_labels(seq.scans[t].points, within[t].probs, dense, nbh, agg.kernel)
        write_prediction_matrix(refined, refined_dir / f"{t:06d}.lprb")
    write_refinement_manifest(out_dir / "refinement.txt", agg)


def cmd_aggregate(args) -> int:
    cfg = load_config(args.config)
    seq, _, paths = _load_sequence(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _refine_sequence_from_files(cfg, seq, Path(args.pred_dir), cfg.aggregation, out_dir)
    _command_manifest(out_dir, cfg, args, inputs=paths, extra=[("pred_dir", str(args.pred_dir))])
    return EXIT_OK


def cmd_lam_train(args) -> int:
    cfg = load_config(args.config)
    seq, truths, paths = _load_sequence(cfg)
    if truths is None:
        raise ConfigError("dataset.labels: ground-truth labels are required to train the aggregation model")
    predictor = _predictor_from_config(cfg)
    adaptation = cfg.adaptation()
    threads = _resolve_threads(args)
    within, _ = generate_refined_predictions(
        seq.scans, seq.poses, predictor, adaptation, seed=cfg.seed,
        use_intensity=False, threads=threads)
    data = build_lam_training_set(seq.scans, seq.poses, within, truths,
                                  cfg.aggregation, ignore_label=cfg.ignore_label)
    params, trace = train_lam(data, cfg.train)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_lam_params(params, out_dir / "lam.ckpt")
    write_loss_trace_csv(trace, out_dir / "loss_trace.csv")
    _command_manifest(out_dir, cfg, args, inputs=paths,
                      extra=[("neighborhoods", str(len(data))),
                             ("final_loss", repr(trace[-1].total))])
    log.info("trained %d epochs on %d neighborhoods, final loss %.6f",
             cfg.train.epochs, len(data), trace[-1].total)
    return EXIT_OK


def cmd_lam_apply(args) -> int:
    cfg = load_config(args.config)
    seq, _, paths = _load_sequence(cfg)
    params = load_lam_params(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = AggregationSpec(kernel=LamKernel(params), k=cfg.aggregation.k,
                          epsilon=cfg.aggregation.epsilon, window=cfg.aggregation.window,
                          stride=cfg.aggregation.stride)
    if args.modulate:
        within = [read_prediction_matrix(Path(args.pred_dir) / f"{t:06d}.lprb")
                  for t in range(len(seq.scans))]
        chunks, _ = _phi_stream(seq, within, agg)
        params = modulate_statistics(params, chunks)
        save_lam_params(params, out_dir / "modulated.ckpt")
        agg = AggregationSpec(kernel=LamKernel(params), k=agg.k, epsilon=agg.epsilon,
                              window=agg.window, stride=agg.stride)
    _refine_sequence_from_files(cfg, seq, Path(args.pred_dir), agg, out_dir)
    _command_manifest(out_dir, cfg, args, inputs=list(paths) + [args.checkpoint],
                      extra=[("pred_dir", str(args.pred_dir)),
                             ("modulated", str(bool(args.modulate)).lower())])
    return EXIT_OK


def cmd_lam_analyze(args) -> int:
    cfg = load_config(args.config)
    seq, _, paths = _load_sequence(cfg)
    params = None
    if args.checkpoint:
        params = load_lam_params(args.checkpoint)
    within = [read_prediction_matrix(Path(args.pred_dir) / f"{t:06d}.lprb")
              for t in range(len(seq.scans))]
    chunks, queries = _phi_stream(seq, within, cfg.aggregation)
    rows = np.concatenate(chunks, axis=0)
    offset = 0
    shifted = []
    for t, rq in enumerate(queries):
        shifted.append(rq + offset)
        offset += len(seq.scans[t])
    row_query = np.concatenate(shifted)
    report = weight_histograms(params, rows, row_query, offset, bins=args.bins)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(report, out_dir / "histograms.csv")
    _command_manifest(out_dir, cfg, args, inputs=paths,
                      extra=[("kernel", "lam" if params is not None else "uniform"),
                             ("bins", str(args.bins))])
    return EXIT_OK


def cmd_cbst(args) -> int:
    cfg = load_config(args.config)
    pred_dir = Path(args.pred_dir)
    paths = sorted(pred_dir.glob("*.lprb"))
    if not paths:
        raise ConfigError(f"--pred-dir: no .lprb files under {pred_dir}")
    preds = [read_prediction_matrix(p) for p in paths]
    labels = np.concatenate([p.probs.argmax(axis=1) for p in preds])
    conf = np.concatenate([p.probs.max(axis=1) for p in preds])
    mask = cbst_select(labels, conf, cfg.cbst)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = 0
    for path, pred in zip(paths, preds):
        n = len(pred)
        save_labels(pred.probs.argmax(axis=1), out_dir / (path.stem + ".label"))
        save_selection_mask(mask[start:start + n], out_dir / (path.stem + ".mask"))
        start += n
    _command_manifest(out_dir, cfg, args, inputs=paths,
                      extra=[("portion", repr(cfg.cbst.portion)),
                             ("selected", str(int(mask.sum()))),
                             ("total", str(len(mask)))])
    log.info("selected %d of %d points at portion %.3f", int(mask.sum()), len(mask), cfg.cbst.portion)
    return EXIT_OK


def _load_label_inputs(spec: str):
    path = Path(spec)
    if path.is_dir():
        files = sorted(path.glob("*.label"))
        if not files:
            raise ConfigError(f"no .label files under {path}")
        return np.concatenate([load_labels(p) for p in files]), files
    return load_labels(path), [path]


def cmd_metrics(args) -> int:
    pred, pred_files = _load_label_inputs(args.pred)
    truth, truth_files = _load_label_inputs(args.truth)
    if len(pred) != len(truth):
        raise ConfigError(f"prediction and truth cover {len(pred)} vs {len(truth)} points")
    matrix = confusion(pred, truth, args.classes, ignore_label=args.ignore)
    report = iou(matrix)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_iou_csv(report, out_dir / "report.csv")
    write_iou_summary(report, out_dir / "summary.json")
    write_confusion_csv(matrix, out_dir / "confusion.csv")
    extra = [("classes", str(args.classes)), ("miou", f"{report.miou:.2f}")]
    if args.static or args.dynamic:
        grouping = {}
        for c in _parse_class_list(args.static):
            grouping[c] = "static"
        for c in _parse_class_list(args.dynamic):
            grouping[c] = "dynamic"
        condensed = condense_static_dynamic(matrix, grouping)
        lines = ["group,static,dynamic"]
        for r, name in enumerate(("static", "dynamic")):
            lines.append(f"{name},{condensed.normalized[r, 0].item()!r},{condensed.normalized[r, 1].item()!r}")
        (out_dir / "condensed.csv").write_text("\n".join(lines) + "\n")
        extra.append(("condensed", "condensed.csv"))
    _command_manifest(out_dir, None, args, inputs=list(pred_files) + list(truth_files), extra=extra)
    sys.stdout.write(f"mIoU {report.miou:.2f}\n")
    return EXIT_OK


def _parse_class_list(text):
    if not text:
        return []
    return [int(tok) for tok in text.split(",") if tok.strip()]


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    seq, truths, paths = _load_sequence(cfg)
    predictor = _predictor_from_config(cfg)
    adaptation = cfg.adaptation()
    threads = _resolve_threads(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    run_adaptation([seq], predictor, noop_student_hook, adaptation, out_dir, threads=threads)

    # analysis artifacts reflect the first (teacher) iteration
    seed0 = _iteration_seed(cfg.seed, 0, 0)
    within, refined = generate_refined_predictions(
        seq.scans, seq.poses, predictor, adaptation, seed=seed0,
        use_intensity=False, threads=threads)
    chunks, queries = _phi_stream(seq, within, cfg.aggregation)
    rows = np.concatenate(chunks, axis=0)
    offset = 0
    shifted = []
    for t, rq in enumerate(queries):
        shifted.append(rq + offset)
        offset += len(seq.scans[t])
    params = cfg.aggregation.kernel.params if isinstance(cfg.aggregation.kernel, LamKernel) else None
    report = weight_histograms(params, rows, np.concatenate(shifted), offset, bins=args.bins)
    write_histogram_csv(report, out_dir / "histograms.csv")

    if truths is not None:
        pred_all = np.concatenate([r.probs.argmax(axis=1) for r in refined])
        truth_all = np.concatenate(truths)
        matrix = confusion(pred_all, truth_all, refined[0].num_classes, ignore_label=cfg.ignore_label)
        miou_report = iou(matrix)
        write_iou_csv(miou_report, out_dir / "report.csv")
        write_iou_summary(miou_report, out_dir / "summary.json")
        write_confusion_csv(matrix, out_dir / "confusion.csv")
        log.info("teacher mIoU vs ground truth: %.2f", miou_report.miou)

    _command_manifest(out_dir, cfg, args, inputs=paths, extra=[("frames", str(len(seq.scans)))])
    return EXIT_OK


def cmd_synthgen(args) -> int:
    from .synth import SyntheticSceneSpec, generate_sequence, write_dataset

    spec = SyntheticSceneSpec(num_frames=args.frames, points_per_frame=args.points, seed=args.seed)
    seq, truths = generate_sequence(spec)
    write_dataset(args.out, seq, truths)
    log.info("wrote %d synthetic frames to %s", args.frames, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidar-ensemble", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    public = ("project", "subsample", "ensemble", "aggregate", "lam-train", "lam-apply",
              "lam-analyze", "cbst", "metrics", "pipeline")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{" + ",".join(public) + "}", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("project", cmd_project, "Project one scan to range-image pixels (CSV: point,u,v,range).")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--frame", type=int, required=True, help="scan index within the dataset")
    p.add_argument("--out", required=True, help="output CSV path, or - for stdout")

    p = add("subsample", cmd_subsample, "Row-subsample one scan; writes the cloud and its parent index map.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--frame", type=int, required=True, help="scan index within the dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = add("ensemble", cmd_ensemble, "Average prediction files over a parent cloud (within-frame ensembling).")
    p.add_argument("--inputs", nargs="+", required=True, help="prediction (.lprb) files to average")
    p.add_argument("--parent-size", type=int, required=True, help="point count of the parent cloud")
    p.add_argument("--out", required=True, help="output .lprb path")

    p = add("aggregate", cmd_aggregate, "Cross-frame refinement of per-frame predictions with the configured kernel.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--pred-dir", required=True, help="directory of per-frame .lprb predictions")
    p.add_argument("--out", required=True, help="output directory")

    p = add("lam-train", cmd_lam_train, "Train the aggregation model on the configured labeled dataset.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--out", required=True, help="output directory (lam.ckpt, loss_trace.csv)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: LIDAR_ENSEMBLE_THREADS or all cores)")

    p = add("lam-apply", cmd_lam_apply, "Refine predictions with a trained model, optionally re-fitting its input statistics.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--pred-dir", required=True, help="directory of per-frame .lprb predictions")
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint (.ckpt)")
    p.add_argument("--modulate", action="store_true", help="replace standardization statistics with this dataset's")
    p.add_argument("--out", required=True, help="output directory")

    p = add("lam-analyze", cmd_lam_analyze, "Histogram the normalized aggregation weights over feature slices.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--pred-dir", required=True, help="directory of per-frame .lprb predictions")
    p.add_argument("--checkpoint", default="", help="model checkpoint; omit for the uniform kernel")
    p.add_argument("--bins", type=int, default=20, help="histogram bins per slice")
    p.add_argument("--out", required=True, help="output directory")

    p = add("cbst", cmd_cbst, "Class-balanced selection of the most confident pseudo labels.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--pred-dir", required=True, help="directory of refined .lprb predictions")
    p.add_argument("--out", required=True, help="output directory (.label and .mask files)")

    p = add("metrics", cmd_metrics, "Confusion matrix, per-class IoU, and mIoU between label files.")
    p.add_argument("--pred", required=True, help="predicted .label file or directory")
    p.add_argument("--truth", required=True, help="ground-truth .label file or directory")
    p.add_argument("--classes", type=int, required=True, help="number of classes")
    p.add_argument("--ignore", type=int, default=None, help="ground-truth label to skip")
    p.add_argument("--static", default="", help="comma-separated static class ids for 2x2 condensation")
    p.add_argument("--dynamic", default="", help="comma-separated dynamic class ids for 2x2 condensation")
    p.add_argument("--out", required=True, help="output directory")

    p = add("pipeline", cmd_pipeline, "Full pseudo-label pipeline: ensembling, refinement, CBST, reports.")
    p.add_argument("--config", required=True, help="pipeline configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bins", type=int, default=20, help="histogram bins per slice")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: LIDAR_ENSEMBLE_THREADS or all cores)")

    # internal: synthetic dataset generator used by tests and CI
    p = sub.add_parser("synthgen", description="Generate a synthetic labeled dataset.")
    p.set_defaults(func=cmd_synthgen)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except (FileFormatError, OSError) as exc:
        log.error("i/o: %s", exc)
        return EXIT_IO
    except (LamTrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numeric: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())
