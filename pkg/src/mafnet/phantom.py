"""Synthetic brain phantoms in BraTS layout.

Each phantom is an elliptical "brain" containing a nested tumor: an edema
shell (code 2) around an enhancing rim (code 4) around a necrotic core
(code 1), so the evaluation regions nest by construction. Modality
contrasts mimic the clinical picture at cartoon fidelity: FLAIR brightens
edema, T1ce strongly brightens the enhancing rim and darkens the core,
while T1/T2 keep the rim and core nearly indistinguishable — the synthesized
target carries genuinely complementary information.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Case
from .errors import DataError
from .niftio import save_volume, volume_from_array

DEFAULT_DIMS = (240, 240, 24)


class BadDims(DataError):
    """Requested phantom extents are unusable."""


def _seed_for_case(dataset_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def generate_phantom(
    seed: int,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    noise_sigma: float = 0.03,
    allow_small: bool = False,
    case_id: str | None = None,
) -> Case:
    """Build one deterministic phantom Case.

    ``noise_sigma`` is the additive Gaussian noise level as a fraction of
    each modality's pre-noise dynamic range. In-plane extents below 224
    require ``allow_small`` (used by tests that also shrink the crop).
    """
    nx, ny, nz = dims
    if min(nx, ny, nz) < 8:
        raise BadDims(f"extents {dims} too small; every axis needs >= 8 voxels")
    if (nx < 224 or ny < 224) and not allow_small:
        raise BadDims(f"in-plane extent {nx}x{ny} < 224; pass allow_small to override")

    rng = np.random.default_rng(seed)
    xs = np.arange(nx, dtype=np.float64)[:, None, None]
    ys = np.arange(ny, dtype=np.float64)[None, :, None]
    zs = np.arange(nz, dtype=np.float64)[None, None, :]
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0

    # Brain ellipsoid with mild per-case jitter.
    jitter = rng.uniform(0.97, 1.03, size=3)
    ax = 0.40 * nx * jitter[0]
    ay = 0.36 * ny * jitter[1]
    az = 0.52 * nz * jitter[2]
    brain = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 + ((zs - cz) / az) ** 2 <= 1.0

    # Tumor: nested ellipsoids sharing a center placed well inside the brain.
    tx = cx + rng.uniform(-0.30, 0.30) * ax
    ty = cy + rng.uniform(-0.30, 0.30) * ay
    tz = cz + rng.uniform(-0.15, 0.15) * az
    r_edema = rng.uniform(0.16, 0.22) * min(nx, ny)
    r_rim = 0.62 * r_edema
    r_core = 0.33 * r_edema
    rz_scale = rng.uniform(0.55, 0.80) * nz / min(nx, ny) * 4.0

    def tumor_dist(radius: float) -> np.ndarray:
        rz = max(1.5, radius * rz_scale)
        return (
            ((xs - tx) / radius) ** 2
            + ((ys - ty) / radius) ** 2
            + ((zs - tz) / rz) ** 2
        )

    edema = (tumor_dist(r_edema) <= 1.0) & brain
    rim = (tumor_dist(r_rim) <= 1.0) & brain
    core = (tumor_dist(r_core) <= 1.0) & brain

    labels = np.zeros((nx, ny, nz), dtype=np.float32)
    labels[edema] = 2.0
    labels[rim] = 4.0
    labels[core] = 1.0

    # Radial coordinate inside the brain plus a fixed low-frequency texture.
    rho = np.sqrt(
        ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 + ((zs - cz) / az) ** 2
    )
    rho = np.clip(rho, 0.0, 1.0)
    wobble = 0.08 * np.sin(2 * np.pi * 3 * xs / nx) * np.cos(2 * np.pi * 2 * ys / ny)
    wobble = np.broadcast_to(wobble, (nx, ny, nz))

    def modality(tissue: np.ndarray, edema_v: float, rim_v: float, core_v: float) -> np.ndarray:
        img = np.full((nx, ny, nz), 0.02, dtype=np.float64)
        img[brain] = tissue[brain]
        img[edema] = edema_v
        img[rim] = rim_v
        img[core] = core_v
        span = img.max() - img.min()
        # Noise inside the head only: the carrier data this mimics is
        # skull-stripped, with exactly constant background.
        img = img + rng.normal(0.0, noise_sigma * span, size=img.shape) * brain
        return img.astype(np.float32)

    # The rim/core distinction is present but subtle in the inputs; the
    # target modality carries it with far stronger contrast.
    t1 = modality(0.62 + 0.18 * (1.0 - rho) + wobble, 0.40, 0.52, 0.28)
    t2 = modality(0.38 + 0.20 * rho - wobble, 0.72, 0.48, 0.66)
    flair = modality(0.52 + 0.10 * (1.0 - rho) + wobble, 0.88, 0.56, 0.44)
    t1ce = modality(0.60 + 0.15 * (1.0 - rho) + wobble, 0.45, 0.92, 0.22)

    case = Case(
        case_id=case_id or f"phantom_{seed}",
        t1=volume_from_array(t1),
        t2=volume_from_array(t2),
        flair=volume_from_array(flair),
        labels=volume_from_array(labels),
        t1ce=volume_from_array(t1ce),
    )
    case.validate()
    return case


def write_phantom_dataset(
    out_dir: str | Path,
    n_cases: int,
    seed: int,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    noise_sigma: float = 0.03,
    allow_small: bool = False,
) -> list[str]:
    """Write ``n_cases`` phantom cases in BraTS directory layout.

    Output bytes are fully determined by the arguments (deterministic gzip).
    Returns the written case ids.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    case_ids = []
    for i in range(n_cases):
        case_id = f"phantom_{i:03d}"
        case = generate_phantom(
            seed=_seed_for_case(seed, i),
            dims=dims,
            noise_sigma=noise_sigma,
            allow_small=allow_small,
            case_id=case_id,
        )
        case_dir = out_dir / case_id
        case_dir.mkdir(exist_ok=True)
        for key, vol in (
            ("t1", case.t1),
            ("t2", case.t2),
            ("flair", case.flair),
            ("t1ce", case.t1ce),
            ("seg", case.labels),
        ):
            save_volume(vol, case_dir / f"{case_id}_{key}.nii.gz")
        case_ids.append(case_id)
    return case_ids
