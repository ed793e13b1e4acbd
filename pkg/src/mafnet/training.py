"""Two-phase optimization: synthesis pre-training, then joint training of
synthesis and segmentation, with deterministic batching and resumable
checkpoints.

Every source of randomness (init, batch order, unpaired target choice,
patch positions) derives from the master seed and absolute counters, so a
run is reproducible and an interrupted run resumed from its last epoch
checkpoint matches the uninterrupted one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import losses as L
from .data import SliceSample, compose_regions
from .errors import DataError, NumericError
from .metrics import dice, ssim
from .models import (
    GeneratorConfig,
    MafGenerator,
    PatchDiscriminator,
    ProjectionHeads,
    UNet,
    UNetConfig,
    init_weights,
    sample_patch_positions,
)

CHECKPOINT_VERSION = 1
PHASE_SYNTHESIS = "synthesis"
PHASE_JOINT = "joint"
_PHASE_ID = {PHASE_SYNTHESIS: 1, PHASE_JOINT: 2}


class NonFiniteLoss(NumericError):
    """A training step produced a non-finite loss; aborts with diagnostics."""


class CorruptFile(DataError):
    """Checkpoint cannot be deserialized."""


class VersionMismatch(DataError):
    """Checkpoint format version is not supported."""


class ConfigMismatchWarning(UserWarning):
    """Loaded checkpoint echoes a different config than the one provided."""


@dataclass
class TrainConfig:
    """Optimizer settings and the two-phase schedule."""

    lr_g: float = 4e-4
    lr_h: float = 4e-4
    lr_d: float = 2e-4
    lr_seg: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    epochs_synthesis: int = 10
    epochs_joint: int = 100
    seed: int = 0
    num_patches: int = 256
    detach_synth_for_seg: bool = False  # ablation: block L_seg gradients into G
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    segmentor: UNetConfig = field(default_factory=UNetConfig)

    def __post_init__(self) -> None:
        for name in ("lr_g", "lr_h", "lr_d", "lr_seg"):
            if getattr(self, name) <= 0:
                raise NumericError(f"{name} must be positive")
        if self.epochs_synthesis < 0 or self.epochs_joint < 0:
            raise NumericError("epoch counts must be nonnegative")
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.segmentor, dict):
            self.segmentor = UNetConfig(**self.segmentor)


def desk_scale_config(**overrides) -> TrainConfig:
    """Small-everything profile so CPU smoke runs finish in minutes."""
    base = dict(
        epochs_synthesis=2,
        epochs_joint=3,
        num_patches=32,
        weights=L.LossWeights(use_identity=False),
        generator=GeneratorConfig(base_width=16, disc_width=16),
        segmentor=UNetConfig(base_width=16),
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class Batch:
    """Stacked slices plus unpaired targets drawn from other cases."""

    x: torch.Tensor  # (B, 3, H, W)
    y: torch.Tensor  # (B, 1, H, W) unpaired T1ce
    seg: torch.Tensor  # (B, H, W) long
    sample_indices: list[int]


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def make_batches(
    samples: list[SliceSample], batch_size: int, seed: int, phase: str, epoch: int
) -> list[Batch]:
    """Deterministic epoch batching with the unpairedness rule.

    Each element's T1ce target comes from a random slice of a *different*
    case whenever one exists (falling back to a different slice, then to the
    element itself, for tiny fixtures).
    """
    if not samples:
        raise DataError("no training samples")
    donors = [i for i, s in enumerate(samples) if s.y_t1ce is not None]
    if not donors:
        raise DataError("no slice carries a T1ce target to train against")

    rng = np.random.default_rng([seed, _PHASE_ID[phase], epoch])
    order = rng.permutation(len(samples))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size].tolist()
        xs, ys, segs = [], [], []
        for i in idx:
            pool = [j for j in donors if samples[j].case_id != samples[i].case_id]
            if not pool:
                pool = [j for j in donors if j != i] or donors
            j = int(pool[rng.integers(len(pool))])
            xs.append(torch.from_numpy(samples[i].x))
            ys.append(torch.from_numpy(samples[j].y_t1ce))
            segs.append(torch.from_numpy(samples[i].seg))
        batches.append(
            Batch(
                x=torch.stack(xs),
                y=torch.stack(ys),
                seg=torch.stack(segs),
                sample_indices=idx,
            )
        )
    return batches


class Trainer:
    """Owns the four networks, their optimizers, and the step counters."""

    def __init__(self, config: TrainConfig):
        self.config = config
        init_rng = torch.Generator().manual_seed(config.seed)
        self.generator = MafGenerator(config.generator)
        self.heads = ProjectionHeads(
            self.generator.tap_channels, dim=config.generator.embed_dim
        )
        self.discriminator = PatchDiscriminator(config.generator.disc_width)
        self.segmentor = UNet(config.segmentor)
        for net in (self.generator, self.heads, self.discriminator, self.segmentor):
            init_weights(net, init_rng)

        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr_g, betas=betas)
        self.opt_h = torch.optim.Adam(self.heads.parameters(), lr=config.lr_h, betas=betas)
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=config.lr_d, betas=betas
        )
        self.opt_seg = torch.optim.Adam(
            self.segmentor.parameters(), lr=config.lr_seg, betas=betas
        )

        self.epochs_done_synthesis = 0
        self.epochs_done_joint = 0
        self.global_step = 0
        self.history: list[dict] = []

    @property
    def components(self) -> dict[str, nn.Module]:
        return {
            "generator": self.generator,
            "heads": self.heads,
            "discriminator": self.discriminator,
            "segmentor": self.segmentor,
        }

    @property
    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {
            "generator": self.opt_g,
            "heads": self.opt_h,
            "discriminator": self.opt_d,
            "segmentor": self.opt_seg,
        }

    # ------------------------------------------------------------- internals

    def _positions(self, pyramid, stream: int) -> dict[int, np.ndarray]:
        out = {}
        for layer, feat in pyramid.features.items():
            total = feat.shape[-2] * feat.shape[-1]
            num = min(self.config.num_patches, total)
            seed = _derived_seed(self.config.seed, self.global_step, layer, stream)
            out[layer] = sample_patch_positions(feat.shape, num, seed)
        return out

    def _update_discriminator(self, batch: Batch, y_fake: torch.Tensor) -> float:
        loss_d = L.adversarial_loss(
            self.discriminator(batch.y),
            self.discriminator(y_fake.detach()),
            "discriminator",
        )
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()
        return float(loss_d.detach())

    def _synthesis_terms(self, batch: Batch, y_fake: torch.Tensor, pyramids_x):
        """Generator-side loss terms against the already-updated discriminator."""
        w = self.config.weights
        loss_gan_g = L.adversarial_loss(None, self.discriminator(y_fake), "generator")

        positions = self._positions(pyramids_x[0], stream=0)
        per_modality = []
        for n in range(self.config.generator.n_modalities):
            pyramid_fake = self.generator.encode(y_fake, n)
            per_modality.append(
                L.patch_nce_modality(
                    pyramids_x[n], pyramid_fake, positions, self.heads, n, w.tau
                )
            )
        nce_x = torch.stack(per_modality).mean()

        nce_y = None
        if w.lambda_y != 0.0:
            positions_idy = self._positions(pyramids_x[0], stream=1)
            nce_y = L.patch_nce_identity(
                batch.y, self.generator, self.heads, positions_idy, w.tau
            )

        # Scalar tail at double precision so logged values recompose exactly.
        l_syn = L.synthesis_objective(
            loss_gan_g.double(),
            nce_x.double(),
            nce_y.double() if nce_y is not None else None,
            w,
        )
        parts = {
            "gan_g": float(loss_gan_g.detach()),
            "nce_x": float(nce_x.detach()),
            "nce_y": float(nce_y.detach()) if nce_y is not None else 0.0,
            "syn": float(l_syn.detach()),
        }
        return l_syn, parts

    def _guard(self, step_fn, batch: Batch) -> dict:
        try:
            record = step_fn(batch)
        except L.NonFinite as exc:
            raise NonFiniteLoss(
                f"non-finite loss at global step {self.global_step}: {exc}; "
                f"lrs=({self.config.lr_g}, {self.config.lr_h}, "
                f"{self.config.lr_d}, {self.config.lr_seg})"
            ) from exc
        for name, value in record.items():
            if not np.isfinite(value):
                raise NonFiniteLoss(
                    f"{name}={value} at global step {self.global_step}"
                )
        return record

    # ----------------------------------------------------------------- steps

    def train_step_synthesis(self, batch: Batch) -> dict:
        """One discriminator update, then one generator + heads update."""

        def body(batch: Batch) -> dict:
            y_fake, pyramids_x, _ = self.generator.synthesize(batch.x)
            loss_d = self._update_discriminator(batch, y_fake)
            l_syn, parts = self._synthesis_terms(batch, y_fake, pyramids_x)
            self.opt_g.zero_grad()
            self.opt_h.zero_grad()
            l_syn.backward()
            self.opt_g.step()
            self.opt_h.step()
            return {"d": loss_d, **parts}

        record = self._guard(body, batch)
        self.global_step += 1
        return record

    def train_step_joint(self, batch: Batch) -> dict:
        """Discriminator update, then a combined generator/heads/segmentor
        update on lam * synthesis + segmentation, with segmentation gradients
        flowing into the generator through the synthesized slice."""

        def body(batch: Batch) -> dict:
            y_fake, pyramids_x, _ = self.generator.synthesize(batch.x)
            loss_d = self._update_discriminator(batch, y_fake)
            l_syn, parts = self._synthesis_terms(batch, y_fake, pyramids_x)
            seg_input_y = y_fake.detach() if self.config.detach_synth_for_seg else y_fake
            logits = self.segmentor(torch.cat([batch.x, seg_input_y], dim=1))
            l_seg = L.segmentation_ce(logits, batch.seg)
            total = L.total_objective(l_syn, l_seg.double(), self.config.weights.lam)
            self.opt_g.zero_grad()
            self.opt_h.zero_grad()
            self.opt_seg.zero_grad()
            total.backward()
            self.opt_g.step()
            self.opt_h.step()
            self.opt_seg.step()
            return {
                "d": loss_d,
                **parts,
                "seg": float(l_seg.detach()),
                "total": float(total.detach()),
            }

        record = self._guard(body, batch)
        self.global_step += 1
        return record

    # ------------------------------------------------------------- inference

    @torch.no_grad()
    def predict(self, x: np.ndarray):
        """Synthesize and segment one normalized (3, H, W) slice.

        Returns (synthesized (H, W), predicted classes (H, W), attention
        (3, Hf, Wf)) as numpy arrays.
        """
        t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).unsqueeze(0)
        y_fake, _, attn = self.generator.synthesize(t)
        logits = self.segmentor(torch.cat([t, y_fake], dim=1))
        classes = logits.argmax(dim=1)
        return (
            y_fake[0, 0].numpy(),
            classes[0].numpy().astype(np.int64),
            attn[0].numpy(),
        )


def validation_metrics(trainer: Trainer, samples: list[SliceSample]) -> dict:
    """Mean region Dice (and SSIM where targets exist) over samples."""
    dices = {"wt": [], "tc": [], "et": []}
    ssims = []
    for sample in samples:
        y_fake, pred, _ = trainer.predict(sample.x)
        pred_regions = compose_regions(pred)
        gt_regions = compose_regions(sample.seg)
        for region in dices:
            dices[region].append(
                dice(getattr(pred_regions, region), getattr(gt_regions, region))
            )
        if sample.y_t1ce is not None:
            ssims.append(ssim(y_fake, sample.y_t1ce[0], dynamic_range=2.0))
    out = {f"dice_{k}": float(np.mean(v)) for k, v in dices.items() if v}
    if ssims:
        out["ssim"] = float(np.mean(ssims))
    if dices["wt"]:
        out["dice_mean"] = float(
            np.mean([out["dice_wt"], out["dice_tc"], out["dice_et"]])
        )
    return out


def fit(
    train_samples: list[SliceSample],
    val_samples: list[SliceSample],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[Trainer, list[dict]]:
    """Run the full schedule: synthesis epochs, then joint epochs.

    Writes one JSONL record per step and per-epoch checkpoints (``last.ckpt``
    always, ``best.ckpt`` by validation mean Dice during the joint phase)
    when ``out_dir`` is given. A keyboard interrupt saves a resumable
    ``last.ckpt`` before propagating.
    """
    if resume_from is not None:
        trainer = load_checkpoint(resume_from, config)
    else:
        trainer = Trainer(config)
    history = trainer.history

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "history.jsonl", "a")

    def log_step(phase: str, epoch: int, step: int, record: dict) -> None:
        if log_fh is not None:
            log_fh.write(
                json.dumps(
                    {"phase": phase, "epoch": epoch, "step": step, **record}
                )
                + "\n"
            )
            log_fh.flush()

    def save_last() -> None:
        if out_dir is not None:
            save_checkpoint(trainer, out_dir / "last.ckpt")

    best_score = max(
        (h["val"]["dice_mean"] for h in history if h.get("val")), default=-1.0
    )
    try:
        while trainer.epochs_done_synthesis < config.epochs_synthesis:
            epoch = trainer.epochs_done_synthesis
            batches = make_batches(
                train_samples, config.batch_size, config.seed, PHASE_SYNTHESIS, epoch
            )
            records = []
            for step, batch in enumerate(batches):
                record = trainer.train_step_synthesis(batch)
                records.append(record)
                log_step(PHASE_SYNTHESIS, epoch, step, record)
            trainer.epochs_done_synthesis += 1
            history.append(
                {
                    "phase": PHASE_SYNTHESIS,
                    "epoch": epoch,
                    "losses": _mean_records(records),
                    "val": None,
                }
            )
            save_last()

        while trainer.epochs_done_joint < config.epochs_joint:
            epoch = trainer.epochs_done_joint
            batches = make_batches(
                train_samples, config.batch_size, config.seed, PHASE_JOINT, epoch
            )
            records = []
            for step, batch in enumerate(batches):
                record = trainer.train_step_joint(batch)
                records.append(record)
                log_step(PHASE_JOINT, epoch, step, record)
            trainer.epochs_done_joint += 1
            val = validation_metrics(trainer, val_samples) if val_samples else {}
            history.append(
                {
                    "phase": PHASE_JOINT,
                    "epoch": epoch,
                    "losses": _mean_records(records),
                    "val": val or None,
                }
            )
            if val and val["dice_mean"] > best_score:
                best_score = val["dice_mean"]
                if out_dir is not None:
                    save_checkpoint(trainer, out_dir / "best.ckpt")
            save_last()
    except KeyboardInterrupt:
        save_last()
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None and val_samples:
        _dump_attention(trainer, val_samples, out_dir / "attention.npz")
    return trainer, history


def _dump_attention(
    trainer: Trainer, samples: list[SliceSample], path: Path, limit: int = 4
) -> None:
    """Persist a few validation attention maps for the report command."""
    maps = {}
    for sample in samples[:limit]:
        _, _, attn = trainer.predict(sample.x)
        maps[f"{sample.case_id}_z{sample.slice_index:03d}"] = attn
    np.savez(path, **maps)


def _mean_records(records: list[dict]) -> dict:
    if not records:
        return {}
    keys = records[0].keys()
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


# ------------------------------------------------------------- checkpointing


def _flatten_state(component: str, sd: dict) -> dict:
    return {f"{component}/{key.replace('.', '/')}": value for key, value in sd.items()}


def _unflatten_state(params: dict, component: str) -> dict:
    prefix = component + "/"
    return {
        key[len(prefix) :].replace("/", "."): value
        for key, value in params.items()
        if key.startswith(prefix)
    }


def save_checkpoint(trainer: Trainer, path: str | Path) -> None:
    """Single-archive checkpoint: parameters keyed ``component/layer/param``,
    optimizer moments, counters, RNG state, config echo, history."""
    params = {}
    for name, module in trainer.components.items():
        params.update(_flatten_state(name, module.state_dict()))
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(trainer.config),
        "params": params,
        "optim": {name: opt.state_dict() for name, opt in trainer.optimizers.items()},
        "counters": {
            "epochs_done_synthesis": trainer.epochs_done_synthesis,
            "epochs_done_joint": trainer.epochs_done_joint,
            "global_step": trainer.global_step,
        },
        "torch_rng": torch.get_rng_state(),
        "history": trainer.history,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, config: TrainConfig | None = None) -> Trainer:
    """Rebuild a Trainer from a checkpoint archive.

    With no ``config`` the stored echo is used. A provided ``config`` wins
    (so a resumed run may extend the schedule); if it differs from the echo
    a ConfigMismatchWarning is issued.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CorruptFile(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptFile(f"{path} is not a checkpoint archive")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {payload['format_version']}, "
            f"supported {CHECKPOINT_VERSION}"
        )

    stored = TrainConfig(**payload["config"])
    if config is not None and asdict(config) != asdict(stored):
        warnings.warn(
            "provided config differs from the checkpoint echo",
            ConfigMismatchWarning,
        )
    trainer = Trainer(config if config is not None else stored)
    for name, module in trainer.components.items():
        module.load_state_dict(_unflatten_state(payload["params"], name))
    for name, opt in trainer.optimizers.items():
        opt.load_state_dict(payload["optim"][name])
    counters = payload["counters"]
    trainer.epochs_done_synthesis = counters["epochs_done_synthesis"]
    trainer.epochs_done_joint = counters["epochs_done_joint"]
    trainer.global_step = counters["global_step"]
    torch.set_rng_state(payload["torch_rng"])
    trainer.history = payload["history"]
    return trainer
