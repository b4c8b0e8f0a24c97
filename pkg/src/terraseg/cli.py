"""Command-line front end.

Exit codes: 0 success, 1 validation error (including usage), 2 I/O error.
Primary results go to stdout as canonical JSON (CSV where requested); logs
and structured error objects go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, ops
from .augment import (
    CopyPasteConfig,
    Sample,
    copy_paste,
    crop_window,
    default_rare_classes,
    hflip,
    random_resized_crop,
)
from .errors import IoFailure, TerrasegError, ValidationFailure
from .jsonio import canonical_json
from .manifest import RunManifest
from .postprocess import CrfParams, DEFAULT_HIGH_BAND, DEFAULT_LOW_BAND, EXACT_PIXEL_LIMIT
from .schema import load_schema
from . import tensorio


class CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage problems to 1
        raise CliUsage(message)


def _common() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--schema", help="class schema JSON (default: built-in)")
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument("--output", help="directory for the run manifest")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    return common


def build_parser() -> _Parser:
    common = _common()
    parser = _Parser(prog="terraseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"terraseg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("eval", parents=[common], help="metrics over gt/pred mask dirs")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("confusions", parents=[common], help="ranked confused class pairs")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=_cmd_confusions)

    p = sub.add_parser("loss", parents=[common], help="loss breakdown for logits + mask")
    p.add_argument("--logits", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--lambda-ce", type=float, default=0.7)
    p.add_argument("--lambda-dice", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--ce-normalisation", default="weighted_mean",
                   choices=("weighted_mean", "mean", "sum"))
    p.add_argument("--dice-class-mode", default="present", choices=("present", "all"))
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("grad-check", parents=[common],
                       help="analytic vs finite-difference gradient check")
    p.add_argument("--logits", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("augment", parents=[common], help="flip + resized crop over pairs")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out-height", type=int, required=True)
    p.add_argument("--out-width", type=int, required=True)
    p.add_argument("--scale-min", type=float, default=0.5)
    p.add_argument("--scale-max", type=float, default=2.0)
    p.add_argument("--hflip-prob", type=float, default=0.5)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("copy-paste", parents=[common],
                       help="rare-class copy-paste augmentation over pairs")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON document with probability, max_instances, "
                   "min_instance_pixels, rare_classes; flags override it")
    p.add_argument("--probability", type=float, default=None)
    p.add_argument("--max-instances", type=int, default=None)
    p.add_argument("--min-pixels", type=int, default=None)
    p.add_argument("--rare", action="append", default=None,
                   help="rare class name (repeatable; default: Dry Bushes, Flowers, Logs)")
    p.set_defaults(func=_cmd_copy_paste)

    p = sub.add_parser("softmax", parents=[common], help="logits TST1 -> probabilities TST1")
    p.add_argument("--logits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_softmax)

    p = sub.add_parser("tta", parents=[common], help="merge augmented-view tensors")
    p.add_argument("--view", action="append", required=True,
                   help="identity:PATH | hflip:PATH | scale:S:PATH (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--base-height", type=int)
    p.add_argument("--base-width", type=int)
    p.set_defaults(func=_cmd_tta)

    p = sub.add_parser("crf", parents=[common], help="dense CRF refinement of probabilities")
    p.add_argument("--probs", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--w-smooth", type=float, default=3.0)
    p.add_argument("--theta-gamma", type=float, default=3.0)
    p.add_argument("--w-bilateral", type=float, default=10.0)
    p.add_argument("--theta-alpha", type=float, default=80.0)
    p.add_argument("--theta-beta", type=float, default=13.0)
    p.add_argument("--exact-limit", type=int, default=EXACT_PIXEL_LIMIT)
    p.set_defaults(func=_cmd_crf)

    p = sub.add_parser("uncertainty", parents=[common],
                       help="entropy/confidence report for a probability tensor")
    p.add_argument("--probs", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--heatmap", help="write the entropy heatmap PNG here")
    p.set_defaults(func=_cmd_uncertainty)

    p = sub.add_parser("mc-aggregate", parents=[common],
                       help="aggregate Monte-Carlo sample tensors")
    p.add_argument("samples", nargs="+")
    p.add_argument("--out", required=True, help="mean probability TST1")
    p.add_argument("--variance-out", help="per-pixel variance TST1 (C=1)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_mc_aggregate)

    p = sub.add_parser("rank", parents=[common],
                       help="difficulty ranking over a directory of TST1 tensors")
    p.add_argument("--probs-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--low-band", type=float, default=DEFAULT_LOW_BAND)
    p.add_argument("--high-band", type=float, default=DEFAULT_HIGH_BAND)
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("costmap", parents=[common], help="mask PNG -> traversability costmap")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="16-bit costmap PNG")
    p.add_argument("--sidecar", help="sidecar JSON path (default: stdout only)")
    p.add_argument("--safe-cost", type=float, default=1.0)
    p.add_argument("--caution-cost", type=float, default=10.0)
    p.set_defaults(func=_cmd_costmap)

    p = sub.add_parser("plan", parents=[common], help="least-cost path on a costmap")
    p.add_argument("--costmap", required=True, help="16-bit costmap PNG")
    p.add_argument("--sidecar", required=True, help="costmap sidecar JSON")
    p.add_argument("--start", required=True, help="row,col")
    p.add_argument("--goal", required=True, help="row,col")
    p.add_argument("--clearance", type=int, default=0)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("overlay", parents=[common], help="alpha-blend mask palette over image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_overlay)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--bind", default="127.0.0.1:8570", help="host:port")
    p.add_argument("--max-body-bytes", type=int)
    p.set_defaults(func=_cmd_serve)

    return parser


# -- helpers -----------------------------------------------------------------

def _read(path: str, manifest: RunManifest) -> bytes:
    data = Path(path).read_bytes()
    manifest.record_input(path, data)
    return data


def _write(path: str, data: bytes) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)


def _emit(text_or_bytes) -> None:
    if isinstance(text_or_bytes, bytes):
        sys.stdout.buffer.write(text_or_bytes + b"\n")
        sys.stdout.buffer.flush()
    else:
        print(text_or_bytes)


def _load_schema(args, manifest: RunManifest):
    if args.schema:
        return load_schema(_read(args.schema, manifest))
    return load_schema(None)


def _paired_files(dir_a: str, dir_b: str) -> list[tuple[Path, Path]]:
    a, b = Path(dir_a), Path(dir_b)
    if not a.is_dir():
        raise IoFailure(f"{dir_a} is not a directory")
    if not b.is_dir():
        raise IoFailure(f"{dir_b} is not a directory")
    names_a = {p.name: p for p in sorted(a.glob("*.png"))}
    names_b = {p.name: p for p in sorted(b.glob("*.png"))}
    shared = sorted(set(names_a) & set(names_b))
    if not shared:
        raise ValidationFailure(f"no matching PNG filenames between {dir_a} and {dir_b}")
    skipped = (set(names_a) | set(names_b)) - set(shared)
    if skipped:
        print(f"warning: skipping {len(skipped)} unmatched file(s)", file=sys.stderr)
    return [(names_a[n], names_b[n]) for n in shared]


def _mask_pairs(args, manifest: RunManifest):
    return [(_read(str(g), manifest), _read(str(p), manifest))
            for g, p in _paired_files(args.gt_dir, args.pred_dir)]


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        r, c = text.split(",")
        return int(r), int(c)
    except ValueError:
        raise ValidationFailure(f"expected row,col — got {text!r}") from None


# -- handlers ----------------------------------------------------------------

def _cmd_eval(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    pairs = _mask_pairs(args, manifest)
    if args.format == "csv":
        _emit(ops.metrics_report_csv(schema, pairs, top_k=args.top_k).decode().rstrip("\n"))
    else:
        _emit(ops.metrics_report_bytes(schema, pairs, top_k=args.top_k))
    return 0


def _cmd_confusions(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    _emit(ops.confusions_bytes(schema, _mask_pairs(args, manifest), args.k))
    return 0


def _cmd_loss(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    _emit(ops.loss_report_bytes(
        schema, _read(args.logits, manifest), _read(args.mask, manifest),
        args.lambda_ce, args.lambda_dice, args.epsilon,
        args.ce_normalisation, args.dice_class_mode))
    return 0


def _cmd_grad_check(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    body, ok = ops.grad_check_bytes(
        schema, _read(args.logits, manifest), _read(args.mask, manifest),
        args.step, args.tolerance)
    _emit(body)
    return 0 if ok else 1


def _cmd_softmax(args, manifest: RunManifest) -> int:
    _write(args.out, ops.softmax_tst1(_read(args.logits, manifest)))
    _emit(canonical_json({"written": args.out}))
    return 0


def _cmd_tta(args, manifest: RunManifest) -> int:
    specs = []
    for view in args.view:
        parts = view.split(":")
        if parts[0] == "scale" and len(parts) == 3:
            specs.append(("scale", float(parts[1]), _read(parts[2], manifest)))
        elif parts[0] in ("identity", "hflip") and len(parts) == 2:
            specs.append((parts[0], 1.0, _read(parts[1], manifest)))
        else:
            raise ValidationFailure(
                f"bad --view {view!r}; use identity:PATH, hflip:PATH or scale:S:PATH")
    base_hw = None
    if args.base_height and args.base_width:
        base_hw = (args.base_height, args.base_width)
    _write(args.out, ops.tta_tst1(specs, base_hw))
    _emit(canonical_json({"written": args.out, "views": len(specs)}))
    return 0


def _cmd_crf(args, manifest: RunManifest) -> int:
    params = CrfParams(args.iterations, args.w_smooth, args.theta_gamma,
                       args.w_bilateral, args.theta_alpha, args.theta_beta)
    refined = ops.crf_tst1(_read(args.probs, manifest), _read(args.image, manifest),
                           params, args.exact_limit)
    _write(args.out, refined)
    _emit(canonical_json({"written": args.out, "iterations": args.iterations}))
    return 0


def _cmd_uncertainty(args, manifest: RunManifest) -> int:
    body, heatmap = ops.uncertainty_outputs(_read(args.probs, manifest), args.threshold)
    if args.heatmap:
        _write(args.heatmap, heatmap)
    _emit(body)
    return 0


def _cmd_mc_aggregate(args, manifest: RunManifest) -> int:
    body, mean_tst1, var_tst1 = ops.mc_aggregate_outputs(
        [_read(p, manifest) for p in args.samples], args.threshold)
    _write(args.out, mean_tst1)
    if args.variance_out:
        _write(args.variance_out, var_tst1)
    _emit(body)
    return 0


def _cmd_rank(args, manifest: RunManifest) -> int:
    probs_dir = Path(args.probs_dir)
    if not probs_dir.is_dir():
        raise IoFailure(f"{args.probs_dir} is not a directory")
    named = [(p.stem, _read(str(p), manifest)) for p in sorted(probs_dir.glob("*.tst1"))]
    if not named:
        raise ValidationFailure(f"no .tst1 files in {args.probs_dir}")
    _emit(ops.rank_bytes(named, args.threshold, args.low_band, args.high_band))
    return 0


def _cmd_costmap(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    sidecar, png = ops.costmap_outputs(schema, _read(args.mask, manifest),
                                       args.safe_cost, args.caution_cost)
    _write(args.out, png)
    if args.sidecar:
        _write(args.sidecar, sidecar)
    _emit(sidecar)
    return 0


def _cmd_plan(args, manifest: RunManifest) -> int:
    _emit(ops.plan_bytes(
        _read(args.costmap, manifest), _read(args.sidecar, manifest),
        _parse_cell(args.start), _parse_cell(args.goal), args.clearance))
    return 0


def _cmd_overlay(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    _write(args.out, ops.overlay_png(schema, _read(args.image, manifest),
                                     _read(args.mask, manifest), args.alpha))
    _emit(canonical_json({"written": args.out, "alpha": args.alpha}))
    return 0


def _cmd_serve(args, manifest: RunManifest) -> int:
    import uvicorn

    from .service import create_app

    schema = _load_schema(args, manifest)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationFailure(f"--bind must be host:port, got {args.bind!r}")
    app = create_app(schema, args.max_body_bytes)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


def _cmd_augment(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    pairs = _paired_files(args.images, args.masks)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (img_path, mask_path) in enumerate(pairs):
        image = tensorio.decode_image(_read(str(img_path), manifest))
        mask = tensorio.decode_mask(_read(str(mask_path), manifest), schema)
        sample = Sample(image, mask)
        flip_roll = np.random.default_rng([args.seed, i, 1]).random()
        flipped = flip_roll < args.hflip_prob
        if flipped:
            sample = hflip(sample)
        crop_seed = int(np.random.SeedSequence([args.seed, i, 2]).generate_state(1)[0])
        window = crop_window(sample.mask.shape, (args.scale_min, args.scale_max), crop_seed)
        sample = random_resized_crop(sample, (args.scale_min, args.scale_max),
                                     (args.out_height, args.out_width), crop_seed)
        _write(str(out_dir / img_path.name), tensorio.encode_image(sample.image))
        _write(str(out_dir / ("mask_" + mask_path.name)),
               tensorio.encode_mask(sample.mask, schema))
        records.append({
            "source": img_path.name,
            "hflip": bool(flipped),
            "window": list(window),
            "crop_seed": crop_seed,
        })
    summary = {"count": len(records), "seed": args.seed, "outputs": records}
    _write(str(out_dir / "augment_manifest.json"), canonical_json(summary).encode())
    _emit(canonical_json({"count": len(records), "out_dir": str(out_dir)}))
    return 0


def _cmd_copy_paste(args, manifest: RunManifest) -> int:
    schema = _load_schema(args, manifest)
    pairs = _paired_files(args.images, args.masks)
    if len(pairs) < 2:
        raise ValidationFailure("copy-paste needs at least two image/mask pairs")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = {}
    if args.config:
        try:
            doc = json.loads(_read(args.config, manifest))
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"copy-paste config is not valid JSON: {exc}") from exc
    rare_names = args.rare if args.rare is not None else doc.get("rare_classes")
    rare = (tuple(schema.indices_named(rare_names)) if rare_names
            else default_rare_classes(schema))
    probability = args.probability if args.probability is not None \
        else float(doc.get("probability", 0.5))
    max_instances = args.max_instances if args.max_instances is not None \
        else int(doc.get("max_instances", 3))
    min_pixels = args.min_pixels if args.min_pixels is not None \
        else int(doc.get("min_instance_pixels", 20))
    samples = []
    for img_path, mask_path in pairs:
        image = tensorio.decode_image(_read(str(img_path), manifest))
        mask = tensorio.decode_mask(_read(str(mask_path), manifest), schema)
        samples.append(Sample(image, mask))
    records = []
    for i, (img_path, mask_path) in enumerate(pairs):
        donor_rng = np.random.default_rng([args.seed, i, 3])
        j = int(donor_rng.integers(0, len(pairs) - 1))
        if j >= i:
            j += 1
        paste_seed = int(np.random.SeedSequence([args.seed, i, 4]).generate_state(1)[0])
        cfg = CopyPasteConfig(rare_classes=rare, probability=probability,
                              max_instances=max_instances,
                              min_instance_pixels=min_pixels, seed=paste_seed)
        result = copy_paste(samples[j], samples[i], cfg)
        _write(str(out_dir / img_path.name), tensorio.encode_image(result.sample.image))
        _write(str(out_dir / ("mask_" + mask_path.name)),
               tensorio.encode_mask(result.sample.mask, schema))
        records.append({
            "recipient": img_path.name,
            "donor": pairs[j][0].name,
            "seed": paste_seed,
            "pasted": result.pasted,
            "no_rare_instances": result.no_rare_instances,
            "instances": [
                {
                    "class_index": inst.class_index,
                    "class_name": schema.names[inst.class_index],
                    "donor_bbox": list(inst.donor_bbox),
                    "offset": list(inst.offset),
                    "pixels_pasted": inst.pixels_pasted,
                }
                for inst in result.instances
            ],
        })
    summary = {"count": len(records), "seed": args.seed, "outputs": records}
    _write(str(out_dir / "copy_paste_manifest.json"), canonical_json(summary).encode())
    _emit(canonical_json({"count": len(records), "out_dir": str(out_dir)}))
    return 0


# -- dispatch ----------------------------------------------------------------

def _error_body(exc: Exception) -> str:
    code = exc.code if isinstance(exc, TerrasegError) else type(exc).__name__
    return canonical_json({"error": {"type": code, "message": str(exc)}})


def cli_dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsage as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    manifest = RunManifest(
        command="terraseg " + " ".join(argv if argv is not None else sys.argv[1:]),
        config={k: v for k, v in vars(args).items() if k != "func" and v is not None
                and not callable(v)},
        seed=getattr(args, "seed", None),
    )
    try:
        rc = args.func(args, manifest)
    except IoFailure as exc:
        print(_error_body(exc), file=sys.stderr)
        return 2
    except TerrasegError as exc:
        print(_error_body(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(_error_body(exc), file=sys.stderr)
        return 2
    if getattr(args, "output", None):
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_manifest.json").write_text(
            canonical_json(manifest.to_json_obj()), encoding="utf-8")
    return rc


def main() -> None:
    sys.exit(cli_dispatch())
