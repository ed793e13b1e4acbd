"""Synthesis quality (SSIM, PSNR) and segmentation quality (Dice, ASSD).

All functions are pure numpy/scipy and operate on single 2-D slices; the
report layer aggregates over slices. ASSD follows the symmetric
surface-distance definition with surfaces taken as mask pixels that touch
background through 4-connectivity (the outside of the grid counts as
background). An empty mask makes ASSD undefined: the value is excluded
from aggregation and counted, never fabricated.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .data import compose_regions
from .errors import DataError

PSNR_CAP_DB = 99.0

# Paper-scale reference points (full BraTS training); echoed in reports as
# footnotes only, never asserted at desk scale.
REFERENCE_SSIM = 0.8879
REFERENCE_PSNR = 22.78
REFERENCE_DICE = {"wt": 0.880, "et": 0.418, "tc": 0.679}


class ShapeMismatch(DataError):
    """Metric inputs do not share a shape (or are too small for the window)."""


def _as_float(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float) -> float:
    """Single-scale structural similarity with the canonical constants.

    11x11 Gaussian window (sigma 1.5), C1 = (0.01 R)^2, C2 = (0.03 R)^2,
    averaged over all fully-contained window positions. Identical inputs
    give exactly 1.0.
    """
    a, b = _as_float(a, b)
    if dynamic_range <= 0:
        raise ShapeMismatch(f"dynamic_range must be positive, got {dynamic_range}")
    window = _gaussian_window()
    if a.shape[0] < window.shape[0] or a.shape[1] < window.shape[1]:
        raise ShapeMismatch(f"image {a.shape} smaller than the {window.shape} window")

    def filt(img: np.ndarray) -> np.ndarray:
        return signal.convolve2d(img, window, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    sigma_a2 = filt(a * a) - mu_a * mu_a
    sigma_b2 = filt(b * b) - mu_b * mu_b
    sigma_ab = filt(a * b) - mu_a * mu_b

    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * sigma_ab + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (sigma_a2 + sigma_b2 + c2)
    )
    return float(ssim_map.mean())


def psnr(a: np.ndarray, b: np.ndarray, dynamic_range: float) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs return +inf.

    Reports cap the sentinel at 99 dB so aggregates stay finite.
    """
    a, b = _as_float(a, b)
    if dynamic_range <= 0:
        raise ShapeMismatch(f"dynamic_range must be positive, got {dynamic_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(dynamic_range**2 / mse)


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Overlap coefficient 2|P∩G| / (|P|+|G|); both-empty counts as 1.0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {gt.shape}")
    p = int(pred.sum())
    g = int(gt.sum())
    if p + g == 0:
        return 1.0
    inter = int(np.logical_and(pred, gt).sum())
    return 2.0 * inter / (p + g)


def surface_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one background 4-neighbor (grid edge counts)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    has_bg_neighbor = (
        ~padded[:-2, 1:-1] | ~padded[2:, 1:-1] | ~padded[1:-1, :-2] | ~padded[1:-1, 2:]
    )
    return m & has_bg_neighbor


def assd(
    pred: np.ndarray, gt: np.ndarray, spacing: tuple[float, float] = (1.0, 1.0)
) -> float | None:
    """Average symmetric surface distance between two masks.

    Sums, over both surfaces, the Euclidean distance to the nearest pixel of
    the other surface (scaled by ``spacing``) and divides by the total
    surface size. Returns None (undefined) when either mask is empty.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {gt.shape}")
    if not pred.any() or not gt.any():
        return None
    sp = surface_pixels(pred)
    sg = surface_pixels(gt)
    dist_to_sg = ndimage.distance_transform_edt(~sg, sampling=spacing)
    dist_to_sp = ndimage.distance_transform_edt(~sp, sampling=spacing)
    total = float(dist_to_sg[sp].sum() + dist_to_sp[sg].sum())
    return total / float(sp.sum() + sg.sum())


def keep_largest_component(mask: np.ndarray) -> np.ndarray:
    """Retain the largest 4-connected component (first in scan order on ties)."""
    mask = np.asarray(mask, dtype=bool)
    labeled, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask)
    counts = np.bincount(labeled.ravel())
    counts[0] = 0
    return labeled == int(counts.argmax())


@dataclass
class SliceMetrics:
    """Per-slice metric row; None marks undefined (excluded, counted)."""

    case_id: str
    slice_index: int
    dice_wt: float
    dice_tc: float
    dice_et: float
    assd_wt: float | None
    assd_tc: float | None
    assd_et: float | None
    ssim: float | None = None
    psnr: float | None = None


REGIONS = ("wt", "tc", "et")
_CSV_COLUMNS = (
    "case_id",
    "slice_index",
    "ssim",
    "psnr",
    "dice_wt",
    "dice_tc",
    "dice_et",
    "assd_wt",
    "assd_tc",
    "assd_et",
)


@dataclass
class MetricsReport:
    """Collection of per-slice rows plus aggregation and serialization."""

    rows: list[SliceMetrics] = field(default_factory=list)
    assd_unit: str = "px"

    def add(self, row: SliceMetrics) -> None:
        self.rows.append(row)

    def aggregate(self) -> dict:
        agg: dict = {"n_slices": len(self.rows), "assd_unit": self.assd_unit}
        for name in ("ssim", "psnr"):
            values = [getattr(r, name) for r in self.rows if getattr(r, name) is not None]
            agg[name] = float(np.mean(values)) if values else None
        for region in REGIONS:
            dvals = [getattr(r, f"dice_{region}") for r in self.rows]
            avals = [
                getattr(r, f"assd_{region}")
                for r in self.rows
                if getattr(r, f"assd_{region}") is not None
            ]
            agg[f"dice_{region}"] = float(np.mean(dvals)) if dvals else None
            agg[f"assd_{region}"] = float(np.mean(avals)) if avals else None
            agg[f"assd_{region}_undefined"] = sum(
                1 for r in self.rows if getattr(r, f"assd_{region}") is None
            )
        return agg

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for r in self.rows:
                writer.writerow(
                    [
                        r.case_id,
                        r.slice_index,
                        *[
                            "" if getattr(r, c) is None else repr(getattr(r, c))
                            for c in _CSV_COLUMNS[2:]
                        ],
                    ]
                )

    def write_json(self, path: str | Path) -> None:
        summary = self.aggregate()
        summary["reference_full_scale"] = {
            "ssim": REFERENCE_SSIM,
            "psnr_db": REFERENCE_PSNR,
            "dice": REFERENCE_DICE,
        }
        Path(path).write_text(json.dumps(summary, indent=2) + "\n")


def evaluate_slice(
    pred_classes: np.ndarray,
    gt_classes: np.ndarray,
    synth: np.ndarray | None = None,
    real_t1ce: np.ndarray | None = None,
    spacing: tuple[float, float] = (1.0, 1.0),
    dynamic_range: float = 2.0,
    case_id: str = "",
    slice_index: int = 0,
) -> SliceMetrics:
    """Score one slice: region Dice/ASSD plus SSIM/PSNR when images given.

    The predicted whole-tumor mask is post-processed with the
    largest-connected-component rule before scoring; core and enhancing
    masks are scored as-is.
    """
    pred_classes = np.asarray(pred_classes)
    gt_classes = np.asarray(gt_classes)
    if pred_classes.shape != gt_classes.shape:
        raise ShapeMismatch(
            f"shapes differ: {pred_classes.shape} vs {gt_classes.shape}"
        )
    pred_regions = compose_regions(pred_classes)
    gt_regions = compose_regions(gt_classes)
    pred_masks = {
        "wt": keep_largest_component(pred_regions.wt),
        "tc": pred_regions.tc,
        "et": pred_regions.et,
    }
    gt_masks = {"wt": gt_regions.wt, "tc": gt_regions.tc, "et": gt_regions.et}

    values: dict = {}
    for region in REGIONS:
        values[f"dice_{region}"] = dice(pred_masks[region], gt_masks[region])
        values[f"assd_{region}"] = assd(pred_masks[region], gt_masks[region], spacing)

    ssim_v = psnr_v = None
    if synth is not None and real_t1ce is not None:
        ssim_v = ssim(synth, real_t1ce, dynamic_range)
        psnr_v = min(psnr(synth, real_t1ce, dynamic_range), PSNR_CAP_DB)
    return SliceMetrics(
        case_id=case_id, slice_index=slice_index, ssim=ssim_v, psnr=psnr_v, **values
    )
