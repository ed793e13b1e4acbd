"""Objective terms: adversarial, patchwise contrastive, segmentation
cross-entropy, and their weighted combinations.

The contrastive machinery ties co-located patches of an input modality and
the synthesized target together in embedding space: for each sampled
position the synthesized-side embedding must match the real-side embedding
at the same position against all other sampled positions of the same image
and layer (no cross-image negatives).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, NumericError
from .models import FeaturePyramid, MafGenerator, ProjectionHeads


class NonFinite(NumericError):
    """A loss input or output is NaN or infinite."""


class ZeroNegatives(NumericError):
    """Contrastive term needs at least one negative sample."""


class BadClass(DataError):
    """Segmentation target outside {0, .., 3}."""


@dataclass
class LossWeights:
    """Weights of the synthesis objective and the joint objective.

    ``use_identity`` selects the (lambda_x, lambda_y) = (1, 1) setting with
    the consistency term, versus (10, 0) without it; pass explicit lambdas
    to override. ``lam`` scales the whole synthesis objective inside the
    joint objective.
    """

    use_identity: bool = True
    lambda_x: float | None = None
    lambda_y: float | None = None
    tau: float = 0.07
    lam: float = 1e-3

    def __post_init__(self) -> None:
        if self.lambda_x is None:
            self.lambda_x = 1.0 if self.use_identity else 10.0
        if self.lambda_y is None:
            self.lambda_y = 1.0 if self.use_identity else 0.0
        if self.tau <= 0:
            raise NumericError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise NumericError(f"lam must be nonnegative, got {self.lam}")


def _require_finite(value: torch.Tensor, label: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFinite(f"{label} is not finite")
    return value


def adversarial_loss(
    d_real: torch.Tensor | None, d_fake: torch.Tensor, side: str
) -> torch.Tensor:
    """Classic sigmoid GAN loss over patch logit maps.

    The discriminator side returns the negated value objective
    -(E[log D(y)] + E[log(1 - D(G(x)))]); the generator side is the
    non-saturating -E[log D(G(x))].
    """
    _require_finite(d_fake, "fake logits")
    if side == "discriminator":
        if d_real is None:
            raise NonFinite("discriminator side needs real logits")
        _require_finite(d_real, "real logits")
        loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    elif side == "generator":
        loss = F.softplus(-d_fake).mean()
    else:
        raise ValueError(f"side must be 'generator' or 'discriminator', got {side!r}")
    return _require_finite(loss, "adversarial loss")


def nce_loss(
    z_hat: torch.Tensor,
    z_pos: torch.Tensor,
    z_negs: torch.Tensor,
    tau: float = 0.07,
) -> torch.Tensor:
    """Temperature-scaled contrastive loss for one query.

    -log of the softmax probability assigned to the positive among the
    positive plus K negatives, all similarities scaled by 1/tau. Strictly
    positive for any finite inputs.
    """
    if tau <= 0:
        raise NumericError(f"tau must be positive, got {tau}")
    z_negs = torch.atleast_2d(z_negs)
    if z_negs.shape[0] < 1 or z_negs.numel() == 0:
        raise ZeroNegatives("need at least one negative embedding")
    logits = torch.cat([(z_hat * z_pos).sum().reshape(1), z_negs @ z_hat]) / tau
    return torch.logsumexp(logits, dim=0) - logits[0]


def _contrastive_matrix(q: torch.Tensor, k: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean contrastive loss over all rows of co-located embedding sets.

    q, k: (B, S, D) with matching positions. Row s uses k[s] as positive and
    the other S-1 keys of the same image as negatives; equivalent to
    averaging ``nce_loss`` over positions.
    """
    b, s, _ = q.shape
    if s < 2:
        raise ZeroNegatives("need at least two positions to form negatives")
    logits = torch.bmm(q, k.transpose(1, 2)) / tau  # (B, S, S)
    target = torch.arange(s, device=q.device).repeat(b)
    return F.cross_entropy(logits.reshape(b * s, s), target)


def patch_nce_modality(
    pyramid_real: FeaturePyramid,
    pyramid_fake: FeaturePyramid,
    positions: dict[int, np.ndarray],
    heads: ProjectionHeads,
    encoder_index: int,
    tau: float = 0.07,
) -> torch.Tensor:
    """Per-modality patchwise contrastive term.

    Mean over layers and positions of the contrastive loss between the
    synthesized-image embedding (query) and the real-image embedding at the
    co-located position, against the real image's other sampled positions.
    """
    per_layer = []
    for layer, pos in positions.items():
        q = heads.project(pyramid_fake.features[layer], pos, encoder_index, layer)
        k = heads.project(pyramid_real.features[layer], pos, encoder_index, layer)
        per_layer.append(_contrastive_matrix(q, k, tau))
    if not per_layer:
        raise ZeroNegatives("no layers selected for the contrastive term")
    return torch.stack(per_layer).mean()


def patch_nce_identity(
    y_real: torch.Tensor,
    generator: MafGenerator,
    heads: ProjectionHeads,
    positions: dict[int, np.ndarray],
    tau: float = 0.07,
) -> torch.Tensor:
    """Consistency term: feed the real target through the generator.

    The real target is replicated to all encoder inputs, re-synthesized, and
    the per-modality contrastive terms between the real and re-synthesized
    streams are averaged over the encoders.
    """
    n = generator.config.n_modalities
    x_id = y_real.expand(-1, n, -1, -1) if y_real.shape[1] == 1 else y_real
    y_hat, pyramids_real, _ = generator.synthesize(x_id)
    per_encoder = []
    for enc in range(n):
        pyramid_fake = generator.encode(y_hat, enc)
        per_encoder.append(
            patch_nce_modality(pyramids_real[enc], pyramid_fake, positions, heads, enc, tau)
        )
    return torch.stack(per_encoder).mean()


def synthesis_objective(
    gan_term: torch.Tensor,
    nce_x_mean: torch.Tensor,
    nce_y: torch.Tensor | None,
    weights: LossWeights,
) -> torch.Tensor:
    """Synthesis objective: adversarial + weighted contrastive terms.

    ``nce_x_mean`` is already averaged over the modalities; ``nce_y`` may be
    omitted when its weight is zero (the term is then never computed).
    """
    total = gan_term + weights.lambda_x * nce_x_mean
    if weights.lambda_y != 0.0:
        if nce_y is None:
            raise NonFinite("identity term required when lambda_y != 0")
        total = total + weights.lambda_y * nce_y
    return _require_finite(total, "synthesis objective")


def segmentation_ce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Standard multi-class cross-entropy, mean over pixels."""
    if logits.ndim == 3:
        logits = logits.unsqueeze(0)
        target = target.unsqueeze(0)
    n_classes = logits.shape[1]
    if target.min() < 0 or target.max() >= n_classes:
        raise BadClass(
            f"target classes in [{int(target.min())}, {int(target.max())}] "
            f"outside 0..{n_classes - 1}"
        )
    return _require_finite(F.cross_entropy(logits, target), "segmentation loss")


def total_objective(
    l_syn: torch.Tensor, l_seg: torch.Tensor, lam: float
) -> torch.Tensor:
    """Joint objective: lam * synthesis + segmentation."""
    _require_finite(l_syn, "synthesis objective")
    _require_finite(l_seg, "segmentation loss")
    return _require_finite(lam * l_syn + l_seg, "total objective")
