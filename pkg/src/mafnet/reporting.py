"""Offline report artifacts: markdown tables, loss curves, attention
heatmaps, and synthesis montages."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError
from .metrics import (
    REFERENCE_DICE,
    REFERENCE_PSNR,
    REFERENCE_SSIM,
    MetricsReport,
)


class EmptyHistory(DataError):
    """History log holds no records."""


_NON_TERM_KEYS = {"phase", "epoch", "step"}


def markdown_table(report: MetricsReport) -> str:
    """Aggregate table in the reference layout: WT/ET/TC x Dice/ASSD, then
    SSIM/PSNR, with the full-scale paper numbers as a footnote."""
    agg = report.aggregate()

    def fmt(value, scale=1.0, suffix=""):
        if value is None:
            return "n/a"
        return f"{value * scale:.4g}{suffix}"

    header = (
        "| Run | WT Dice ↑ | WT ASSD ↓ | ET Dice ↑ | ET ASSD ↓ | "
        "TC Dice ↑ | TC ASSD ↓ | SSIM ↑ | PSNR (dB) ↑ |"
    )
    divider = "|" + "---|" * 9
    row = (
        f"| this run | {fmt(agg['dice_wt'], 100, '%')} | {fmt(agg['assd_wt'])} "
        f"| {fmt(agg['dice_et'], 100, '%')} | {fmt(agg['assd_et'])} "
        f"| {fmt(agg['dice_tc'], 100, '%')} | {fmt(agg['assd_tc'])} "
        f"| {fmt(agg['ssim'])} | {fmt(agg['psnr'])} |"
    )
    footnote = (
        f"\nFull-scale reference (BraTS2020, long GPU training): "
        f"SSIM {REFERENCE_SSIM}, PSNR {REFERENCE_PSNR} dB, Dice "
        f"WT {REFERENCE_DICE['wt'] * 100:.1f}% / "
        f"ET {REFERENCE_DICE['et'] * 100:.1f}% / "
        f"TC {REFERENCE_DICE['tc'] * 100:.1f}%. "
        f"Desk-scale runs are smoke-scale and not comparable.\n"
        f"ASSD unit: {agg['assd_unit']}; undefined ASSD rows excluded "
        f"(WT {agg['assd_wt_undefined']}, ET {agg['assd_et_undefined']}, "
        f"TC {agg['assd_tc_undefined']})."
    )
    return "\n".join([header, divider, row]) + "\n" + footnote + "\n"


def read_history(path: str | Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise EmptyHistory(f"{path} holds no records")
    return [json.loads(ln) for ln in lines]


def loss_curves(records: list[dict], out_dir: str | Path) -> list[Path]:
    """One PNG per loss term present in the step records."""
    if not records:
        raise EmptyHistory("no history records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    terms = [k for k in records[0] if k not in _NON_TERM_KEYS]
    written = []
    for term in terms:
        values = [r[term] for r in records if term in r]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(values, lw=1.0)
        boundaries = [
            i
            for i in range(1, len(records))
            if records[i].get("phase") != records[i - 1].get("phase")
        ]
        for b in boundaries:
            ax.axvline(b, color="gray", ls="--", lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel(term)
        ax.set_title(f"{term} per training step")
        fig.tight_layout()
        path = out_dir / f"loss_{term}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def save_attention_dump(attention_maps: dict[str, np.ndarray], path: str | Path) -> None:
    """Persist per-slice attention maps (each (3, H, W), rows sum to one)."""
    np.savez(path, **attention_maps)


def attention_heatmaps(dump_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Render one figure per dumped slice: the three modality weight maps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with np.load(dump_path) as dump:
        for name in dump.files:
            attn = dump[name]
            fig, axes = plt.subplots(1, attn.shape[0], figsize=(9, 3))
            for n, ax in enumerate(np.atleast_1d(axes)):
                im = ax.imshow(attn[n], vmin=0.0, vmax=1.0, cmap="viridis")
                ax.set_title(f"modality {n + 1} weight")
                ax.axis("off")
            fig.colorbar(im, ax=axes, shrink=0.8)
            path = out_dir / f"attention_{name}.png"
            fig.savefig(path, dpi=110)
            plt.close(fig)
            written.append(path)
    return written


def synthesis_montage(
    x: np.ndarray,
    synthesized: np.ndarray,
    real: np.ndarray | None,
    out_path: str | Path,
    title: str = "",
) -> None:
    """Side-by-side panel: input triple, synthesized target, real if present."""
    panels = [
        ("T1", x[0]),
        ("T2", x[1]),
        ("FLAIR", x[2]),
        ("synthesized T1ce", synthesized),
    ]
    if real is not None:
        panels.append(("real T1ce", real))
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.4))
    for ax, (name, img) in zip(np.atleast_1d(axes), panels):
        ax.imshow(img.T, cmap="gray", vmin=-1.0, vmax=1.0, origin="lower")
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
