# salprop/app.py
"""
Command-line entry point.

    python -m salprop.app detect IMAGE [IMAGE ...] --model M --out PATH
    python -m salprop.app train --images DIR --masks DIR --model-out PATH
    python -m salprop.app eval --proposals DIR --annotations DIR --out PATH
    python -m salprop.app curves --report PATH --out PATH
    python -m salprop.app sweep-nms --images DIR --annotations DIR --model M --out PATH

This module stays thin. It resolves one RunConfig (defaults, then --config
file, then flags, then SALPROP_SEED), builds one edge source shared by the
workers, fans images out to a thread pool and writes results in input order.
Every failure ends in one place, ``main``, which prints ``error: <message>``
and returns the exit code of the error family.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

from .bayes import write_saliency_csv
from .common import (
    EmptyTrainingSet,
    UsageError,
    atomic_write_text,
    configure_logging,
    exit_code_for,
    header_comment,
    render_csv,
)
from .config import PARAMS, RunConfig, build_config, load_config_file, save_config_file
from .crf import TrainingSample, build_graph, load_model, save_model, train_bcfw, weak_labels
from .edge_source import BaseEdgeSource, make_edge_source
from .edges import extract_edgelets, prepare_sparse_map
from .evalkit import (
    evaluate,
    format_summary_row,
    load_annotations,
    read_report_csv,
    sweep_nms,
    write_curves_csv,
    write_report_csv,
)
from .features import compute_node_features
from .imagio import load_image, load_mask, luminance, rgb_to_lab
from .proposals import (
    ProposalSet,
    analyze_scene,
    candidate_pool,
    generate_proposals,
    read_proposals_csv,
    write_proposals_csv,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SWEEP_HEADER = ["theta", "iou", "recall"]

T = TypeVar("T")
R = TypeVar("R")


class SalPropArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- parsing
def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _param_parent() -> argparse.ArgumentParser:
    """Options shared by every subcommand: verbosity, config files and the tunables."""
    parent = SalPropArgumentParser(add_help=False)
    parent.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parent.add_argument("--config", metavar="JSON", help="read settings from a saved config file")
    parent.add_argument("--save-config", metavar="JSON", help="write the resolved settings to a config file")
    group = parent.add_argument_group("pipeline settings")
    for key, flag, help_text in PARAMS:
        info = RunConfig.model_fields[key]
        group.add_argument(
            flag,
            dest=key,
            type=info.annotation,
            default=None,
            help=f"{help_text} (default: {info.default})",
        )
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _param_parent()
    parser = SalPropArgumentParser(
        prog="python -m salprop.app",
        description="Saliency-ranked object proposals from edges.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("detect", parents=[parent], help="propose windows for one or more images")
    p.add_argument("images", nargs="+", help="image files or directories of images")
    p.add_argument("--model", required=True, help="trained CRF model file")
    p.add_argument("--out", required=True, help="CSV file (one image) or output directory")
    p.add_argument("--edges", help="EMAP file, or a directory of <stem>.emap files")
    p.add_argument("--saliency-csv", help="also dump per-edgelet saliency (file or directory)")
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("train", parents=[parent], help="learn CRF weights from images and object masks")
    p.add_argument("--images", required=True, help="directory of training images")
    p.add_argument("--masks", required=True, help="directory of binary masks paired by file stem")
    p.add_argument("--model-out", required=True, help="where to write the model file")
    p.add_argument("--edges", help="EMAP file, or a directory of <stem>.emap files")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[parent], help="recall report of proposal CSVs against annotations")
    p.add_argument("--proposals", required=True, help="directory of <stem>.csv proposal files")
    p.add_argument("--annotations", required=True, help="directory of VOC XML or CSV annotations")
    p.add_argument("--iou", type=_float_list, default=[0.5, 0.6, 0.7], help="IoU thresholds (default: 0.5,0.6,0.7)")
    p.add_argument("--out", required=True, help="report CSV")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("curves", parents=[parent], help="export recall curves of a report for plotting")
    p.add_argument("--report", required=True, help="report CSV written by eval")
    p.add_argument("--out", required=True, help="plot-data CSV")
    p.set_defaults(handler=cmd_curves)

    p = sub.add_parser("sweep-nms", parents=[parent], help="recall at --max-n for several NMS cut-offs")
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--annotations", required=True, help="directory of VOC XML or CSV annotations")
    p.add_argument("--model", required=True, help="trained CRF model file")
    p.add_argument(
        "--thetas",
        type=_float_list,
        default=[0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9],
        help="NMS cut-offs to try (default: 0.5 to 0.9 by 0.05)",
    )
    p.add_argument("--iou", type=_float_list, default=[0.5, 0.7], help="IoU thresholds (default: 0.5,0.7)")
    p.add_argument("--edges", help="EMAP file, or a directory of <stem>.emap files")
    p.add_argument("--out", required=True, help="sweep CSV")
    p.set_defaults(handler=cmd_sweep_nms)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then explicit flags; SALPROP_SEED wins last."""
    values: Dict[str, object] = {}
    if args.config:
        values.update(load_config_file(args.config))
    for key, _flag, _help in PARAMS:
        given = getattr(args, key, None)
        if given is not None:
            values[key] = given
    return build_config(values)


# ---------------------------------------------------------------- helpers
def list_images(paths: Iterable[str]) -> List[Path]:
    """Image files named directly or found in the given directories, in sorted order per directory."""
    out: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            out.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        elif path.is_file():
            out.append(path)
        else:
            raise FileNotFoundError(f"image not found: {path}")
    return out


def find_mask(masks_dir: Path, stem: str) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        candidate = masks_dir / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def run_parallel(func: Callable[[T], R], items: Sequence[T], jobs: int) -> List[R]:
    """Apply ``func`` to every item with up to ``jobs`` threads; results keep input order."""
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _output_path(out: Path, image: Path, many: bool, suffix: str = ".csv") -> Path:
    return out / f"{image.stem}{suffix}" if many else out


# ---------------------------------------------------------------- detect
def detect_one(image_path: Path, model, source: BaseEdgeSource, config: RunConfig) -> ProposalSet:
    """Proposals of one image file, with the scene analysis attached."""
    image = load_image(image_path)
    return generate_proposals(image, source.edge_map_for(image_path), model, config, image_id=image_path.stem)


def cmd_detect(args: argparse.Namespace, config: RunConfig) -> int:
    images = list_images(args.images)
    if not images:
        raise UsageError("no images to process")
    model = load_model(args.model)
    source = make_edge_source(args.edges)
    out = Path(args.out)
    many = len(images) > 1 or out.is_dir()
    settings = config.as_flags()

    results = run_parallel(lambda p: detect_one(p, model, source, config), images, config.jobs)
    for image_path, pset in zip(images, results):
        comment = header_comment("detect", {**settings, "elapsed_s": f"{pset.elapsed:.4f}"})
        target = write_proposals_csv(pset, _output_path(out, image_path, many), comment)
        print(f"{pset.image_id}: {len(pset)} proposals in {pset.elapsed:.2f} s -> {target}")
        if args.saliency_csv:
            dump = _output_path(Path(args.saliency_csv), image_path, many, "_saliency.csv")
            strengths = [e.strength for e in pset.analysis.edgelets]
            write_saliency_csv(pset.analysis.saliency, strengths, dump, comment)
    return 0


# ---------------------------------------------------------------- train
def training_sample(
    image_path: Path, mask_path: Path, source: BaseEdgeSource, config: RunConfig
) -> Optional[TrainingSample]:
    """Weakly labelled graph of one image/mask pair; None when the image has no edgelets."""
    image = load_image(image_path)
    mask = load_mask(mask_path, image.shape)
    lab = rgb_to_lab(image)
    sparse = prepare_sparse_map(source.edge_map_for(image_path), lab, config.sigma)
    edgelets = extract_edgelets(sparse, config.min_len, config.min_mag)
    if not edgelets:
        logger.warning("%s: no edgelets, skipped", image_path.name)
        return None
    feats = compute_node_features(edgelets, lab, luminance(lab), sparse, config)
    graph = build_graph(edgelets, feats, config.link_radius, config.max_degree)
    gold = weak_labels(edgelets, mask, config.boundary_tol, image.shape)
    logger.debug("%s: %d edgelets, %d object", image_path.name, len(edgelets), int(gold.sum()))
    return TrainingSample(graph, gold)


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    images_dir, masks_dir = Path(args.images), Path(args.masks)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    pairs: List[Tuple[Path, Path]] = []
    for image_path in list_images([images_dir]):
        mask_path = find_mask(masks_dir, image_path.stem)
        if mask_path is None:
            logger.warning("%s: no mask, skipped", image_path.name)
            continue
        pairs.append((image_path, mask_path))
    if not pairs:
        raise EmptyTrainingSet(f"no image/mask pairs in {images_dir} and {masks_dir}")

    source = make_edge_source(args.edges)
    samples = run_parallel(lambda pair: training_sample(pair[0], pair[1], source, config), pairs, config.jobs)
    samples = [s for s in samples if s is not None]
    if not samples:
        raise EmptyTrainingSet("no training image produced any edgelet")

    model = train_bcfw(
        samples,
        C=config.C,
        max_passes=config.max_passes,
        gap_tol=config.gap_tol,
        seed=config.seed,
        max_iters=config.bp_iters,
        damping=config.damping,
    )
    save_model(model, args.model_out)
    summary = model.summary
    print(f"Trained on {len(samples)} images in {summary.passes} passes -> {args.model_out}")
    print(f"final duality gap: {summary.final_gap:.6g}")
    print(f"training accuracy: {summary.accuracy:.4f}")
    return 0


# ---------------------------------------------------------------- eval / curves
def load_proposal_dir(directory: Path) -> Dict[str, ProposalSet]:
    if not directory.is_dir():
        raise FileNotFoundError(f"proposal directory not found: {directory}")
    return {p.stem: read_proposals_csv(p) for p in sorted(directory.glob("*.csv"))}


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    proposals = load_proposal_dir(Path(args.proposals))
    annotations = load_annotations(args.annotations)
    report = evaluate(proposals, annotations, args.iou, config.max_n)
    settings = {"iou": ";".join(f"{t:g}" for t in args.iou), "max_n": config.max_n}
    target = write_report_csv(report, args.out, header_comment("eval", settings))
    print(format_summary_row(report))
    print(f"report -> {target}")
    return 0


def cmd_curves(args: argparse.Namespace, config: RunConfig) -> int:
    report = read_report_csv(args.report)
    target = write_curves_csv(report, args.out, header_comment("curves", {"report": args.report}))
    print(f"{len(report.curves)} series -> {target}")
    return 0


# ---------------------------------------------------------------- sweep-nms
def cmd_sweep_nms(args: argparse.Namespace, config: RunConfig) -> int:
    images = list_images([args.images])
    annotations = load_annotations(args.annotations)
    model = load_model(args.model)
    source = make_edge_source(args.edges)

    def pool_of(path: Path):
        analysis = analyze_scene(load_image(path), source.edge_map_for(path), model, config)
        return candidate_pool(analysis, config)

    pools = dict(zip((p.stem for p in images), run_parallel(pool_of, images, config.jobs)))
    sweep = sweep_nms(pools, annotations, args.thetas, args.iou, config.max_n)
    rows = [
        (f"{theta:g}", f"{thr:g}", repr(vals[n]))
        for thr, vals in sweep.recall.items()
        for n, theta in enumerate(sweep.thetas)
    ]
    comment = header_comment("sweep-nms", config.as_flags())
    target = atomic_write_text(args.out, render_csv(SWEEP_HEADER, rows, comment))
    for thr, theta in sweep.best().items():
        print(f"IoU {thr:g}: best NMS cut-off {theta:g}")
    print(f"sweep -> {target}")
    return 0


# ---------------------------------------------------------------- main
def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns
    -------
    int
        0 on success, 1 for usage errors, 2 for file system errors, 3 for data errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        config = resolve_config(args)
        if args.save_config:
            save_config_file(config, args.save_config, note=args.command)
        return args.handler(args, config)
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    raise SystemExit(main())
