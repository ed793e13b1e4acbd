"""Learnable networks: modality encoders, attention fusion, decoder,
patch discriminator, projection heads, and the segmentation UNet.

The generator follows the residual translation backbone: a 7x7 stem, two
stride-2 downsampling convolutions and nine residual blocks per encoder,
then a fusion block and a two-stage upsampling decoder with tanh output.
Encoder layer index 0 is an identity tap on the raw input so the contrastive
layer set {0, 4, 8, 12, 16} starts at the pixels themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError


class ShapeMismatch(DataError):
    """Tensor shape violates a network contract."""


class TooManyPatches(DataError):
    """Requested more patch positions than the layer has locations."""


@dataclass
class GeneratorConfig:
    """Shared settings for the three encoders, fusion block and decoder."""

    n_modalities: int = 3
    base_width: int = 64  # desk scale uses 16
    n_blocks: int = 9
    nce_layers: tuple[int, ...] = (0, 4, 8, 12, 16)
    embed_dim: int = 256
    disc_width: int = 64

    def __post_init__(self) -> None:
        if self.n_modalities != 3:
            raise ShapeMismatch("exactly three input modalities are supported")
        layers = tuple(self.nce_layers)
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ShapeMismatch(f"nce_layers must be strictly increasing: {layers}")
        n_layers = 10 + self.n_blocks  # stem(4) + two downsampling stages(6) + blocks
        if layers and (layers[0] < 0 or layers[-1] >= n_layers):
            raise ShapeMismatch(
                f"nce_layers {layers} outside the encoder's 0..{n_layers - 1} range"
            )
        self.nce_layers = layers

    @property
    def bottleneck_channels(self) -> int:
        return 4 * self.base_width


@dataclass
class UNetConfig:
    in_channels: int = 4
    out_classes: int = 4
    base_width: int = 64  # desk scale uses 16
    depth: int = 3

    def __post_init__(self) -> None:
        if self.in_channels != 4 or self.out_classes != 4:
            raise ShapeMismatch("segmentor contract is 4 input channels, 4 classes")


@dataclass
class FeaturePyramid:
    """Tapped per-layer features plus the bottleneck of one encoder pass."""

    features: dict[int, torch.Tensor]
    bottleneck: torch.Tensor = field(repr=False)


class ResnetBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(dim, dim, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(dim),
            nn.ReLU(True),
            nn.Conv2d(dim, dim, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.block(x)


class ModalityEncoder(nn.Module):
    """Single-modality encoder; layer 0 is an identity tap on the input."""

    def __init__(self, base_width: int, n_blocks: int = 9, in_channels: int = 1):
        super().__init__()
        b = base_width
        layers: list[nn.Module] = [
            nn.Identity(),
            nn.Conv2d(in_channels, b, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(b),
            nn.ReLU(True),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b),
            nn.ReLU(True),
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b),
            nn.ReLU(True),
        ]
        channels = [in_channels, b, b, b, 2 * b, 2 * b, 2 * b, 4 * b, 4 * b, 4 * b]
        for _ in range(n_blocks):
            layers.append(ResnetBlock(4 * b))
            channels.append(4 * b)
        self.layers = nn.ModuleList(layers)
        self.layer_channels = channels
        self.out_channels = 4 * b

    def forward(self, x, taps: tuple[int, ...] = ()) -> FeaturePyramid:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatch(f"encoder expects (B, 1, H, W), got {tuple(x.shape)}")
        feats: dict[int, torch.Tensor] = {}
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i in taps:
                feats[i] = h
        return FeaturePyramid(features=feats, bottleneck=h)


class MafBlock(nn.Module):
    """Modality-level attention fusion.

    Concatenated bottlenecks pass through a 3x3 convolution producing one
    logit map per modality; a softmax over the modality axis yields weights
    that sum to one at every location. Re-weighted features are concatenated
    and fused by a 1x1 convolution with LeakyReLU.
    """

    def __init__(self, channels: int, n_modalities: int = 3, leak: float = 0.2):
        super().__init__()
        self.n_modalities = n_modalities
        self.attention = nn.Conv2d(n_modalities * channels, n_modalities, 3, padding=1)
        self.fuse = nn.Conv2d(n_modalities * channels, channels, 1)
        self.act = nn.LeakyReLU(leak)

    def forward(self, *features: torch.Tensor):
        if len(features) != self.n_modalities:
            raise ShapeMismatch(f"expected {self.n_modalities} feature maps")
        shape = features[0].shape
        if any(f.shape != shape for f in features):
            raise ShapeMismatch("all modality features must share one shape")
        stacked = torch.cat(features, dim=1)
        attn = torch.softmax(self.attention(stacked), dim=1)  # (B, N, H, W)
        weighted = torch.cat(
            [attn[:, n : n + 1] * features[n] for n in range(self.n_modalities)], dim=1
        )
        fused = self.act(self.fuse(weighted))
        return fused, attn


class Decoder(nn.Module):
    """Two upsampling stages back to input resolution, tanh-bounded output."""

    def __init__(self, channels: int, out_channels: int = 1):
        super().__init__()
        c = channels
        self.model = nn.Sequential(
            nn.ConvTranspose2d(c, c // 2, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c // 2),
            nn.ReLU(True),
            nn.ConvTranspose2d(c // 2, c // 4, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c // 4),
            nn.ReLU(True),
            nn.Conv2d(c // 4, out_channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        )

    def forward(self, fused):
        return self.model(fused)


class MafGenerator(nn.Module):
    """Three modality encoders, attention fusion, one decoder."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.encoders = nn.ModuleList(
            ModalityEncoder(config.base_width, config.n_blocks)
            for _ in range(config.n_modalities)
        )
        self.maf = MafBlock(config.bottleneck_channels, config.n_modalities)
        self.decoder = Decoder(config.bottleneck_channels)

    @property
    def tap_channels(self) -> dict[int, int]:
        enc = self.encoders[0]
        return {i: enc.layer_channels[i] for i in self.config.nce_layers}

    def encode(self, x_n: torch.Tensor, modality_index: int) -> FeaturePyramid:
        if not 0 <= modality_index < self.config.n_modalities:
            raise ShapeMismatch(f"modality index {modality_index} out of range")
        return self.encoders[modality_index](x_n, taps=self.config.nce_layers)

    def synthesize(self, x: torch.Tensor):
        """Full pass: returns (synthesized, per-encoder pyramids, attention)."""
        if x.ndim != 4 or x.shape[1] != self.config.n_modalities:
            raise ShapeMismatch(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeMismatch("spatial extents must be divisible by 4")
        pyramids = [
            self.encode(x[:, n : n + 1], n) for n in range(self.config.n_modalities)
        ]
        fused, attn = self.maf(*[p.bottleneck for p in pyramids])
        y = self.decoder(fused)
        return y, pyramids, attn

    def forward(self, x):
        return self.synthesize(x)[0]


class PatchDiscriminator(nn.Module):
    """70x70-receptive-field convolutional discriminator (logit map output)."""

    def __init__(self, width: int = 64, in_channels: int = 1):
        super().__init__()
        w = width
        self.model = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(4 * w, 8 * w, 4, stride=1, padding=1),
            nn.InstanceNorm2d(8 * w),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(8 * w, 1, 4, stride=1, padding=1),
        )

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 1:
            raise ShapeMismatch(f"expected (B, 1, H, W), got {tuple(img.shape)}")
        return self.model(img)


def sample_patch_positions(
    layer_shape: tuple[int, ...], num_patches: int, seed: int
) -> np.ndarray:
    """Uniform positions without replacement, deterministic per seed.

    Positions are flattened spatial indices; the caller reuses them for the
    synthesized-image stream so the two streams stay co-located.
    """
    h, w = layer_shape[-2], layer_shape[-1]
    total = h * w
    if num_patches > total:
        raise TooManyPatches(f"{num_patches} patches requested, layer has {total}")
    rng = np.random.default_rng(seed)
    return rng.permutation(total)[:num_patches]


class ProjectionHeads(nn.Module):
    """Per-(encoder, layer) two-layer MLPs onto the unit 256-sphere."""

    def __init__(self, tap_channels: dict[int, int], n_modalities: int = 3, dim: int = 256):
        super().__init__()
        self.dim = dim
        self.heads = nn.ModuleDict()
        for n in range(n_modalities):
            for layer, c in tap_channels.items():
                self.heads[f"enc{n}_layer{layer}"] = nn.Sequential(
                    nn.Linear(c, dim), nn.ReLU(True), nn.Linear(dim, dim)
                )

    def project(
        self,
        feat: torch.Tensor,
        positions: np.ndarray,
        encoder_index: int,
        layer_index: int,
    ) -> torch.Tensor:
        """Embed the patches of ``feat`` at ``positions``; (B, S, dim), unit norm."""
        key = f"enc{encoder_index}_layer{layer_index}"
        if key not in self.heads:
            raise ShapeMismatch(f"no projection head for {key}")
        b, c, h, w = feat.shape
        pos = torch.as_tensor(np.asarray(positions), dtype=torch.long, device=feat.device)
        if pos.numel() and int(pos.max()) >= h * w:
            raise ShapeMismatch(f"position {int(pos.max())} outside {h}x{w} layer")
        patches = feat.flatten(2).permute(0, 2, 1)[:, pos]  # (B, S, C)
        emb = self.heads[key](patches)
        return F.normalize(emb, p=2, dim=-1)


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.InstanceNorm2d(out_ch, affine=True),
            nn.ReLU(True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.InstanceNorm2d(out_ch, affine=True),
            nn.ReLU(True),
        )

    def forward(self, x):
        return self.block(x)


class UNet(nn.Module):
    """Plain UNet over the concatenated real triple + synthesized target."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        b = config.base_width
        widths = [b * 2**i for i in range(config.depth + 1)]
        self.inc = DoubleConv(config.in_channels, widths[0])
        self.downs = nn.ModuleList(
            nn.Sequential(nn.MaxPool2d(2), DoubleConv(widths[i], widths[i + 1]))
            for i in range(config.depth)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2)
            for i in reversed(range(config.depth))
        )
        self.up_convs = nn.ModuleList(
            DoubleConv(2 * widths[i], widths[i]) for i in reversed(range(config.depth))
        )
        self.outc = nn.Conv2d(widths[0], config.out_classes, 1)

    def forward(self, x4: torch.Tensor) -> torch.Tensor:
        if x4.ndim != 4 or x4.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected (B, {self.config.in_channels}, H, W), got {tuple(x4.shape)}"
            )
        if x4.shape[2] % 2**self.config.depth or x4.shape[3] % 2**self.config.depth:
            raise ShapeMismatch(
                f"spatial extents must be divisible by {2 ** self.config.depth}"
            )
        skips = [self.inc(x4)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        h = skips.pop()
        for up, conv in zip(self.ups, self.up_convs):
            h = conv(torch.cat([skips.pop(), up(h)], dim=1))
        return self.outc(h)


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02) -> None:
    """GAN-style initialization: N(0, 0.02) convolutions, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
