"""Unpaired contrast-enhanced MRI synthesis with modality-level attention
fusion, jointly trained with brain tumor segmentation."""

from .data import (
    Case,
    DatasetSplit,
    RegionMasks,
    SliceSample,
    compose_regions,
    load_case,
    load_dataset,
    make_slices,
    normalize,
    remap_labels,
    split_cases,
)
from .losses import (
    LossWeights,
    adversarial_loss,
    nce_loss,
    patch_nce_identity,
    patch_nce_modality,
    segmentation_ce,
    synthesis_objective,
    total_objective,
)
from .metrics import (
    MetricsReport,
    SliceMetrics,
    assd,
    dice,
    evaluate_slice,
    keep_largest_component,
    psnr,
    ssim,
)
from .models import (
    GeneratorConfig,
    MafGenerator,
    PatchDiscriminator,
    ProjectionHeads,
    UNet,
    UNetConfig,
    sample_patch_positions,
)
from .niftio import Volume, load_volume, read_nifti, save_volume, write_nifti
from .phantom import generate_phantom, write_phantom_dataset
from .training import (
    TrainConfig,
    Trainer,
    desk_scale_config,
    fit,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"
