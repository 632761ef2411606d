"""``tabseg`` command line.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numeric failure.  Errors are reported as one line on stderr::

    tabseg: error [FormatError] <message>
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, TabsError, UsageError

log = logging.getLogger("tabseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'lo,hi'") from None
    return lo, hi


def cmd_phantom(args) -> int:
    from .data import write_phantom_dataset

    records = write_phantom_dataset(args.out, args.count, args.size, args.site, args.seed,
                                    args.atrophy_range, args.retest)
    print(f"wrote {len(records)} subjects to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .config import train_config_from_file
    from .reports import METHOD_LABELS
    from .trainer import train
    from . import plotting

    cfg = train_config_from_file(args.config)
    result = train(cfg)
    plotting.loss_curves({cfg.model.variant: result.history}, METHOD_LABELS,
                         f"{cfg.checkpoint}.history.png")
    ck = result.checkpoint
    print(f"selected epoch {ck.epoch} val_loss {ck.best_validation_loss:.6g} -> {cfg.checkpoint}")
    return 0


def _prepare_scan(scan, size: int):
    from .data import mip_mask, normalize_intensity, pad_crop

    if scan.dims != (size,) * 3:
        scan = pad_crop(scan, size, mip_mask([scan]))
    return normalize_intensity(scan)


def cmd_segment(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import Volume, load_volume, save_volume
    from .trainer import segment

    ck = load_checkpoint(args.model)
    scan = load_volume(args.input)
    if scan.channels != 1:
        raise ConfigurationError(f"{args.input}: expected a 1-channel scan, got {scan.channels}")
    image = _prepare_scan(scan, ck.config.input_size).values
    probs = segment(ck.build(), image)
    out = Volume(probs, "tissue_probs", provenance=f"segment {ck.config.variant}",
                 site=scan.site, subject=scan.subject, timepoint=scan.timepoint)
    save_volume(out, args.out)
    return 0


def cmd_eval(args) -> int:
    from .data import atomic_write_text, load_volume
    from .metrics import evaluate_pair

    pred, ref = load_volume(args.pred), load_volume(args.ref)
    record = evaluate_pair(pred, ref)
    atomic_write_text(args.out, record.to_csv())
    return 0


def cmd_shapes(args) -> int:
    from .config import TRAIN_KEYS, model_from_keys, parse_kv_file
    from .models import format_shape, infer_shapes

    values = parse_kv_file(args.config, TRAIN_KEYS) if args.config else {}
    if args.preset:
        values["preset"] = args.preset
    if args.variant:
        values["variant"] = args.variant
    cfg = model_from_keys(values)
    for name, shape in infer_shapes(cfg):
        print(f"{name}: {format_shape(shape)}")
    return 0


def _run_plan(args, expected: str) -> int:
    from .config import plan_from_file
    from .trainer import run_plan

    plan = plan_from_file(args.plan)
    if plan.kind != expected:
        raise ConfigurationError(f"{args.plan}: plan kind is {plan.kind!r}, expected {expected!r}")
    report = run_plan(plan, args.jobs)
    for path in report.write(plan.report):
        print(path)
    return 0


def cmd_inspect(args) -> int:
    from .checkpoint import MAGIC as CKPT_MAGIC, load_checkpoint
    from .data import VOLUME_MAGIC, inspect_volume
    from .errors import DataError, FormatError

    try:
        with open(args.input, "rb") as fh:
            magic = fh.read(8)
    except FileNotFoundError:
        raise DataError(f"{args.input}: no such file") from None
    if magic == VOLUME_MAGIC:
        h = inspect_volume(args.input)
        print(f"volume channels={h.channels} dims={'x'.join(map(str, h.dims))} "
              f"semantics={h.semantics} metadata={h.metadata}")
    elif magic == CKPT_MAGIC:
        ck = load_checkpoint(args.input)
        n = sum(int(np.prod(p.shape)) for p in ck.params.values())
        print(f"checkpoint variant={ck.config.variant} params={n} tensors={len(ck.params)} "
              f"epoch={ck.epoch} best_val={ck.best_validation_loss!r} adam_step={ck.adam.step_count}")
    else:
        raise FormatError(f"{args.input}: unrecognised magic {magic!r} at offset 0")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tabseg", description="Volumetric tissue segmentation experiments.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="generate a synthetic single-site dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--site", default="siteA")
    s.add_argument("--atrophy-range", type=_range, default=None)
    s.add_argument("--retest", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("train", help="train one model from a config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment a scan with a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="compare a prediction with a reference")
    s.add_argument("--pred", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("shapes", help="print the forward shape chain")
    s.add_argument("--config")
    s.add_argument("--preset", choices=("desk", "paper"))
    s.add_argument("--variant")
    s.set_defaults(func=cmd_shapes)

    for kind in ("performance", "generality", "reliability"):
        s = sub.add_parser(kind, help=f"run a {kind} experiment plan")
        s.add_argument("--plan", required=True)
        s.add_argument("--jobs", type=int, default=1)
        s.set_defaults(func=lambda a, k=kind: _run_plan(a, k))

    s = sub.add_parser("inspect", help="print a volume or checkpoint header")
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    from .runtime import configure_runtime

    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        configure_runtime()
        return args.func(args)
    except TabsError as exc:
        msg = " ".join(str(exc).split())
        print(f"tabseg: error [{type(exc).__name__}] {msg}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tabseg: error [OSError] {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
