"""Command-line entry points.

Subcommands: ``phantom`` (synthetic dataset), ``train`` (two-phase
schedule), ``synthesize`` (re-stacked target volumes + montages),
``evaluate`` (metric tables), ``report`` (loss curves and attention maps).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import reporting, training
from .config import RunConfig, load_run_config, write_run_config
from .errors import DataError, MafnetError, NumericError, UsageError
from .metrics import MetricsReport, evaluate_slice
from .niftio import save_volume, volume_from_array
from .phantom import write_phantom_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ExistsNonEmpty(DataError):
    """Output directory already holds files."""


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"--dims wants X,Y,Z, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dims wants integers, got {text!r}")
    return dims


def _require_fresh(path: Path, marker: str | None = None) -> None:
    if marker is not None:
        if (path / marker).exists():
            raise ExistsNonEmpty(f"{path / marker} exists; pick a fresh --out")
        return
    if path.exists() and any(path.iterdir()):
        raise ExistsNonEmpty(f"{path} exists and is not empty; pick a fresh --out")


def _resolve_split(case_ids: list[str], split_seed: int) -> data_mod.DatasetSplit:
    """7:1:2 split when there are enough cases; a fixed desk fallback below
    the minimum (last sorted case serves as both val and test)."""
    if len(case_ids) >= 10:
        return data_mod.split_cases(case_ids, split_seed)
    ids = sorted(case_ids)
    train = ids[:-1] or ids
    holdout = [ids[-1]]
    return data_mod.DatasetSplit(train=train, val=holdout, test=holdout, seed=split_seed)


def _slices_for(cases, ids, crop_size):
    samples = []
    for case in cases:
        if case.case_id in ids:
            samples.extend(data_mod.make_slices(case, crop_size=crop_size))
    return samples


# ------------------------------------------------------------------- commands


def cmd_phantom(args) -> None:
    out = Path(args.out)
    _require_fresh(out)
    case_ids = write_phantom_dataset(
        out,
        n_cases=args.cases,
        seed=args.seed,
        dims=args.dims,
        noise_sigma=args.noise,
        allow_small=args.allow_small,
    )
    print(f"wrote {len(case_ids)} phantom cases to {out}")


def cmd_train(args) -> None:
    run_cfg = load_run_config(args.config, desk_scale=args.desk_scale)
    out = Path(args.out)
    if args.resume is None:
        _require_fresh(out, marker="history.jsonl")
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(run_cfg, out / "config.toml")

    cases = data_mod.load_dataset(args.data)
    split = _resolve_split([c.case_id for c in cases], run_cfg.split_seed)
    (out / "split.json").write_text(
        json.dumps(
            {"train": split.train, "val": split.val, "test": split.test,
             "seed": split.seed},
            indent=2,
        )
        + "\n"
    )
    train_samples = _slices_for(cases, set(split.train), run_cfg.crop_size)
    val_samples = _slices_for(cases, set(split.val), run_cfg.crop_size)
    print(
        f"training on {len(train_samples)} slices from {len(split.train)} cases, "
        f"validating on {len(val_samples)} slices"
    )
    trainer, history = training.fit(
        train_samples,
        val_samples,
        run_cfg.train,
        out_dir=out,
        resume_from=args.resume,
    )
    last_val = next((h["val"] for h in reversed(history) if h.get("val")), None)
    print(f"finished {len(history)} epochs; checkpoints in {out}")
    if last_val:
        print(
            "last validation: "
            + ", ".join(f"{k}={v:.4f}" for k, v in sorted(last_val.items()))
        )


def cmd_synthesize(args) -> None:
    trainer = training.load_checkpoint(args.ckpt)
    cases = data_mod.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for case in cases:
        samples = data_mod.make_slices(case, crop_size=args.crop_size)
        if not samples:
            print(f"{case.case_id}: no tumor slices, skipped")
            continue
        slices = []
        for sample in samples:
            y_fake, _, _ = trainer.predict(sample.x)
            slices.append(y_fake)
        volume = volume_from_array(np.stack(slices, axis=2))
        case_dir = out / case.case_id
        case_dir.mkdir(exist_ok=True)
        save_volume(volume, case_dir / f"{case.case_id}_t1ce_synth.nii.gz")
        mid_index = len(samples) // 2
        mid = samples[mid_index]
        reporting.synthesis_montage(
            mid.x,
            slices[mid_index],
            mid.y_t1ce[0] if mid.y_t1ce is not None else None,
            case_dir / f"{case.case_id}_montage.png",
            title=f"{case.case_id} slice {mid.slice_index}",
        )
        print(f"{case.case_id}: {len(slices)} slices synthesized")


def cmd_evaluate(args) -> None:
    trainer = training.load_checkpoint(args.ckpt)
    cases = data_mod.load_dataset(args.data)
    ids = [c.case_id for c in cases]
    if args.split == "all":
        eval_ids = set(ids)
    else:
        split = _resolve_split(ids, args.split_seed)
        eval_ids = set(getattr(split, args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    report = MetricsReport()
    for case in cases:
        if case.case_id not in eval_ids:
            continue
        for sample in data_mod.make_slices(case, crop_size=args.crop_size):
            y_fake, pred, _ = trainer.predict(sample.x)
            report.add(
                evaluate_slice(
                    pred,
                    sample.seg,
                    synth=y_fake,
                    real_t1ce=sample.y_t1ce[0] if sample.y_t1ce is not None else None,
                    case_id=case.case_id,
                    slice_index=sample.slice_index,
                )
            )
    if not report.rows:
        raise DataError(f"no evaluable slices in split {args.split!r}")
    report.write_csv(out / "rows.csv")
    report.write_json(out / "summary.json")
    table = reporting.markdown_table(report)
    (out / "table.md").write_text(table)
    print(table)


def cmd_report(args) -> None:
    records = reporting.read_history(args.history)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = reporting.loss_curves(records, out)
    print(f"wrote {len(written)} loss curves to {out}")
    dump = Path(args.history).parent / "attention.npz"
    if dump.exists():
        figures = reporting.attention_heatmaps(dump, out)
        print(f"wrote {len(figures)} attention figures")
    else:
        print("no attention.npz next to the history file; heatmaps skipped")


# ----------------------------------------------------------------- arg parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mafnet",
        description="Unpaired T1ce synthesis + tumor segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a synthetic BraTS-layout dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_parse_dims, default=(240, 240, 24))
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--allow-small", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="run the two-phase training schedule")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="synthesize target volumes + montages")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--crop-size", type=int, default=224)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="score a checkpoint and emit tables")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--crop-size", type=int, default=224)
    p.add_argument("--split", choices=("test", "val", "train", "all"), default="test")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="loss curves and attention heatmaps")
    p.add_argument("--history", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MafnetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
