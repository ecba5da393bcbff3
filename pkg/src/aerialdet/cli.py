"""
Command-line entry point.

Subcommands: ``crop`` and ``eval`` for data, ``check``, ``demo`` and ``micro-train`` for the model.
Options can also come from a JSON file given with ``--config``; keys are
option names (``"window"``, ``"iou"``, ...) and explicit flags take
precedence. The log level is read from ``AERIALDET_LOG_LEVEL``.

Exit codes: 0 success, 1 a check failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dota_io import FormatError, clip_annotations_to_patch, crop_patches, format_annotation, parse_annotation, read_manifest, read_results
from .metrics import evaluate, format_csv, format_table

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2

log = logging.getLogger("aerialdet")


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _write_json(path: str | os.PathLike, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_crop(args) -> int:
    try:
        manifest = read_manifest(args.manifest)
    except FileNotFoundError:
        raise InputError(f"manifest {args.manifest} not found") from None
    out = Path(args.out)
    labels_dir = out / "labelTxt"
    labels_dir.mkdir(parents=True, exist_ok=True)
    if not manifest:
        log.warning("manifest %s lists no scenes", args.manifest)
    listing, problems = [], []
    for scene_id in sorted(manifest):
        w, h = manifest[scene_id]
        ann_path = Path(args.ann_dir) / f"{scene_id}.txt"
        if not ann_path.is_file():
            problems.append(f"{scene_id}: no annotation file {ann_path}")
            continue
        records, diags = parse_annotation(ann_path.read_text())
        problems.extend(f"{scene_id}: {d}" for d in diags)
        for patch in crop_patches(w, h, args.window, args.overlap, scene_id):
            local = clip_annotations_to_patch(records, patch)
            (labels_dir / f"{patch.name}.txt").write_text(format_annotation(local))
            listing.append({"name": patch.name, "scene": scene_id, "x0": patch.x0, "y0": patch.y0,
                            "width": patch.width, "height": patch.height, "padded": patch.padded,
                            "objects": len(local)})
    _write_json(out / "patches.json", listing)
    (out / "patches.txt").write_text("".join(f"{p['name']} {p['scene']} {p['x0']} {p['y0']} {p['width']} "
                                             f"{p['height']} {int(p['padded'])}\n" for p in listing))
    print(f"{len(listing)} patches from {len(manifest)} scenes -> {out}")
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return EXIT_INPUT_ERROR if problems else EXIT_OK


def load_ground_truth(gt_dir: str | os.PathLike) -> dict:
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise InputError(f"ground-truth directory {gt_dir} does not exist")
    gts = {}
    for path in sorted(gt_dir.glob("*.txt")):
        records, diags = parse_annotation(path.read_text())
        for d in diags:
            log.warning("%s: %s", path.name, d)
        gts[path.stem] = records
    return gts


def cmd_eval(args) -> int:
    gts = load_ground_truth(args.gt)
    try:
        dets = read_results(args.results)
    except FileNotFoundError as e:
        raise InputError(str(e)) from None
    report = evaluate(dets, gts, args.iou, args.method)
    rows = {Path(args.results).name or "results": report}
    print(format_table(rows), end="")
    if args.csv:
        Path(args.csv).write_text(format_csv(rows))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import SUITES, run_suites

    only = args.only or None
    if only:
        unknown = sorted(set(only) - set(SUITES))
        if unknown:
            raise InputError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    results = run_suites(args.seed, corrupt_params=args.corrupt_params, only=only)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}")
        for line in r.lines:
            if args.verbose or line.startswith("FAIL"):
                print(f"    {line}")
        # timings go to stderr so stdout is identical across runs
        print(f"{r.name}: {r.seconds:.2f} s", file=sys.stderr)
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} suites passed")
    if args.json:
        _write_json(args.json, [{"suite": r.name, "passed": r.passed, "lines": r.lines} for r in results])
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_demo(args) -> int:
    from .demo import demo_report, format_report

    if args.size <= 0 or args.size % 32:
        raise InputError(f"--size must be a positive multiple of 32, got {args.size}")
    report = demo_report(args.size, args.drm, args.bvr, args.duplicate, args.seed)
    print(format_report(report))
    if args.json:
        _write_json(args.json, report)
    return EXIT_OK


def cmd_micro_train(args) -> int:
    from .training import micro_train

    if args.steps < 0:
        raise InputError(f"--steps must be non-negative, got {args.steps}")
    out = Path(args.out) if args.out else None
    trace = micro_train(args.steps, args.seed, checkpoint=out / "checkpoint.npz" if out else None)
    for i, v in enumerate(trace.step_losses):
        print(f"step {i:4d}  loss {v:.6f}")
    print(f"initial {trace.initial_loss:.6f}  final {trace.final_loss:.6f}  ratio {trace.ratio:.4f}")
    if out:
        (out / "trace.json").write_text(trace.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aerialdet", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crop", help="tile scenes into overlapping patches with clipped labels")
    p.add_argument("--manifest", required=True, help="scene sizes: JSON {id: [w, h]} or 'id w h' lines")
    p.add_argument("--ann-dir", required=True, help="directory of <scene>.txt DOTA label files")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--overlap", type=int, default=500)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("eval", help="score per-class result files against DOTA labels")
    p.add_argument("--results", required=True, help="directory of Task2_<class>.txt files")
    p.add_argument("--gt", required=True, help="directory of <image>.txt label files")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--method", choices=("eleven_point", "all_point"), default="eleven_point")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the self-check suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-params", action="store_true", help="negative control: poison a parameter")
    p.add_argument("--only", nargs="*", help="run only these suites")
    p.add_argument("--json", help="also write results as JSON")
    p.add_argument("-v", "--verbose", action="store_true", help="print every check line")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("demo", help="forward a random batch and dump shapes and statistics")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--drm", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--bvr", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--duplicate", action="store_true", help="make the second patch a copy of the first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("micro-train", help="overfit the toy detector on synthetic scenes")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for trace.json and checkpoint.npz")
    p.set_defaults(func=cmd_micro_train)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str] | None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in subparsers), None)
    if known.config and command is not None:
        try:
            values = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read config {known.config}: {e}") from None
        if not isinstance(values, dict):
            raise InputError(f"config {known.config} must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
        sub = subparsers[command]
        known_dests = {a.dest for a in sub._actions} - {"help", "func"}
        unknown = sorted(set(values) - known_dests)
        if unknown:
            raise InputError(f"config keys {unknown} do not apply to '{command}'")
        sub.set_defaults(**values)
        # required options may now come from the file
        for action in sub._actions:
            if action.dest in values:
                action.required = False
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("AERIALDET_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (InputError, FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
