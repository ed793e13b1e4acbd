"""Case loading, axial slicing, normalization, label handling, splits.

A Case bundles one patient's co-registered modality volumes (T1/T2/FLAIR,
optional T1ce) and the label volume with raw BraTS codes {0, 1, 2, 4}.
Training consumes SliceSamples: center-cropped axial slices, min-max
normalized to [-1, 1], restricted to slices that contain tumor.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError
from .niftio import Volume, load_volume

MODALITIES = ("t1", "t2", "flair")
TARGET_MODALITY = "t1ce"
SEG_KEY = "seg"

# Class indices after remapping: fixes the 4-channel order of the segmentor.
CLASS_BACKGROUND = 0
CLASS_NECROSIS = 1
CLASS_EDEMA = 2
CLASS_ENHANCING = 3
NUM_CLASSES = 4

RAW_LABEL_CODES = (0, 1, 2, 4)
_REMAP = {0: 0, 1: 1, 2: 2, 4: 3}

DEFAULT_CROP = 224


class MissingModality(DataError):
    """A required modality file is absent from the case directory."""


class DimensionMismatch(DataError):
    """Volumes within one case do not share identical dims."""


class TooSmall(DataError):
    """In-plane extent is smaller than the crop window."""


class NonFinite(NumericError):
    """Slice contains NaN or infinity."""


class UnknownLabel(DataError):
    """Label code outside the BraTS convention {0, 1, 2, 4}."""


class TooFewCases(DataError):
    """Not enough cases to form a 7:1:2 split."""


@dataclass
class Case:
    """One patient's co-registered volumes.

    T1ce and labels may be absent (synthesis-only evaluation); training and
    slicing require labels.
    """

    case_id: str
    t1: Volume
    t2: Volume
    flair: Volume
    labels: Volume | None = None
    t1ce: Volume | None = None

    def validate(self) -> None:
        dims = self.t1.voxels.shape
        for name in ("t2", "flair", "labels", "t1ce"):
            vol = getattr(self, name)
            if vol is not None and vol.voxels.shape != dims:
                raise DimensionMismatch(
                    f"{self.case_id}: {name} has dims {vol.voxels.shape}, expected {dims}"
                )
        if self.labels is not None:
            codes = np.unique(self.labels.voxels)
            if not np.isin(codes, RAW_LABEL_CODES).all():
                bad = sorted(set(codes.tolist()) - set(RAW_LABEL_CODES))
                raise UnknownLabel(
                    f"{self.case_id}: label codes {bad} outside {{0, 1, 2, 4}}"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.t1.voxels.shape


@dataclass
class SliceSample:
    """One training sample: input triple, optional target, class map."""

    x: np.ndarray  # (3, H, W) float32 in [-1, 1]; channels T1, T2, FLAIR
    seg: np.ndarray  # (H, W) int64 in {0, 1, 2, 3}
    case_id: str
    slice_index: int
    y_t1ce: np.ndarray | None = None  # (1, H, W) float32 in [-1, 1]

    def validate(self) -> None:
        if self.x.ndim != 3 or self.x.shape[0] != 3:
            raise DimensionMismatch(f"x has shape {self.x.shape}, expected (3, H, W)")
        if self.seg.shape != self.x.shape[1:]:
            raise DimensionMismatch(
                f"seg shape {self.seg.shape} does not match x {self.x.shape[1:]}"
            )
        if self.x.min() < -1.0 or self.x.max() > 1.0:
            raise NonFinite(f"x outside [-1, 1]: [{self.x.min()}, {self.x.max()}]")
        if not (self.seg > 0).any():
            raise UnknownLabel(f"{self.case_id}[{self.slice_index}]: no tumor pixels")


@dataclass
class RegionMasks:
    """Nested evaluation regions: enhancing ⊆ core ⊆ whole."""

    wt: np.ndarray
    tc: np.ndarray
    et: np.ndarray


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int


def _find_file(dir_path: Path, case_id: str, key: str) -> Path | None:
    for suffix in (".nii.gz", ".nii"):
        candidate = dir_path / f"{case_id}_{key}{suffix}"
        if candidate.exists():
            return candidate
    return None


def load_case(
    dir_path: str | Path, require_t1ce: bool = False, require_seg: bool = True
) -> Case:
    """Load a BraTS-layout case directory ``<id>/<id>_{t1,t2,flair,t1ce,seg}``."""
    dir_path = Path(dir_path)
    case_id = dir_path.name
    volumes: dict[str, Volume | None] = {}
    for key in MODALITIES:
        path = _find_file(dir_path, case_id, key)
        if path is None:
            raise MissingModality(f"{case_id}: no {key} volume in {dir_path}")
        volumes[key] = load_volume(path)

    t1ce_path = _find_file(dir_path, case_id, TARGET_MODALITY)
    if t1ce_path is None and require_t1ce:
        raise MissingModality(f"{case_id}: no {TARGET_MODALITY} volume in {dir_path}")
    t1ce = load_volume(t1ce_path) if t1ce_path is not None else None

    seg_path = _find_file(dir_path, case_id, SEG_KEY)
    if seg_path is None and require_seg:
        raise MissingModality(f"{case_id}: no {SEG_KEY} volume in {dir_path}")
    labels = load_volume(seg_path) if seg_path is not None else None

    case = Case(
        case_id=case_id,
        t1=volumes["t1"],
        t2=volumes["t2"],
        flair=volumes["flair"],
        labels=labels,
        t1ce=t1ce,
    )
    case.validate()
    return case


def normalize(slice2d: np.ndarray) -> np.ndarray:
    """Min-max normalize one slice to [-1, 1]; constant slices map to all -1."""
    arr = np.asarray(slice2d, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFinite("slice contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.full(arr.shape, -1.0, dtype=np.float32)
    out = 2.0 * (arr - lo) / (hi - lo) - 1.0
    return out.astype(np.float32)


def remap_labels(raw: np.ndarray) -> np.ndarray:
    """Map raw BraTS codes {0,1,2,4} to contiguous classes {0,1,2,3}."""
    arr = np.asarray(raw)
    if not np.isin(arr, RAW_LABEL_CODES).all():
        bad = sorted(set(np.unique(arr).tolist()) - set(RAW_LABEL_CODES))
        raise UnknownLabel(f"label codes {bad} outside {{0, 1, 2, 4}}")
    out = arr.astype(np.int64, copy=True)
    out[arr == 4] = CLASS_ENHANCING
    return out


def compose_regions(seg: np.ndarray) -> RegionMasks:
    """Build the nested WT / TC / ET masks from a {0,1,2,3} class map."""
    seg = np.asarray(seg)
    wt = np.isin(seg, (CLASS_NECROSIS, CLASS_EDEMA, CLASS_ENHANCING))
    tc = np.isin(seg, (CLASS_NECROSIS, CLASS_ENHANCING))
    et = seg == CLASS_ENHANCING
    return RegionMasks(wt=wt, tc=tc, et=et)


def center_window(extent: int, crop: int) -> slice:
    """Symmetric trim; an odd margin loses one more pixel on the high side."""
    lo = (extent - crop) // 2
    return slice(lo, lo + crop)


def make_slices(case: Case, crop_size: int = DEFAULT_CROP) -> list[SliceSample]:
    """Extract center-cropped axial slices that contain tumor.

    One SliceSample per axial index whose cropped, remapped class map has at
    least one nonzero pixel. Intensities are normalized per slice.
    """
    if case.labels is None:
        raise MissingModality(f"{case.case_id}: slicing needs a label volume")
    nx, ny, _ = case.dims
    if nx < crop_size or ny < crop_size:
        raise TooSmall(
            f"{case.case_id}: in-plane extent {nx}x{ny} smaller than crop {crop_size}"
        )
    sx = center_window(nx, crop_size)
    sy = center_window(ny, crop_size)

    samples: list[SliceSample] = []
    label_grid = case.labels.voxels
    for z in range(case.dims[2]):
        seg = remap_labels(label_grid[sx, sy, z].astype(np.int64))
        if not (seg > 0).any():
            continue
        x = np.stack(
            [normalize(getattr(case, key).voxels[sx, sy, z]) for key in MODALITIES]
        )
        y = None
        if case.t1ce is not None:
            y = normalize(case.t1ce.voxels[sx, sy, z])[None]
        samples.append(
            SliceSample(x=x, seg=seg, case_id=case.case_id, slice_index=z, y_t1ce=y)
        )
    return samples


def split_cases(case_ids: list[str], seed: int) -> DatasetSplit:
    """Deterministic 7:1:2 partition at the case level.

    Sizes are floor(0.7 n) / floor(0.1 n) / remainder over the sorted id set.
    """
    n = len(case_ids)
    if n < 10:
        raise TooFewCases(f"need at least 10 cases for a 7:1:2 split, got {n}")
    ids = sorted(case_ids)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.1 * n))
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def load_dataset(root: str | Path, require_t1ce: bool = False) -> list[Case]:
    """Load every case directory under ``root``, sorted by case id."""
    root = Path(root)
    case_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not case_dirs:
        raise MissingModality(f"no case directories under {root}")
    return [load_case(p, require_t1ce=require_t1ce) for p in case_dirs]
