"""Encoders, decoders, the pose-pair discriminator, classifier heads, and the
pose forecaster.

Two convolutional families are provided: a strided-conv architecture for
64x64 frames and a deeper 3x3-conv architecture with optional U-Net style
skip connections for 128x128 frames. Reduced input sizes and a width
multiplier give tiny first-class configurations for gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError

NORM_EPS = 1e-8
LEAKY_SLOPE = 0.2

_VGG_PLAN = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))


@dataclass(frozen=True)
class NetworkSpec:
    """Shared shape configuration for one encoder/decoder family."""

    arch: str = "dcgan"
    in_channels: int = 3
    image_size: int = 64
    dim_hc: int = 128
    dim_hp: int = 5
    width_mult: float = 1.0
    skip_connections: bool = False

    def __post_init__(self):
        if self.arch not in ("dcgan", "vgg_unet"):
            raise ConfigurationError(f"unknown arch {self.arch!r}")
        if self.dim_hc < 1 or self.dim_hp < 1:
            raise ConfigurationError("dim_hc and dim_hp must be >= 1")
        if self.in_channels < 1:
            raise ConfigurationError("in_channels must be >= 1")
        if self.width_mult <= 0:
            raise ConfigurationError("width_mult must be > 0")
        size = self.image_size
        if size < 8 or size & (size - 1) != 0:
            raise ConfigurationError("image_size must be a power of two >= 8")
        # Canonical sizes are 64 (dcgan) and 128 (vgg_unet); smaller
        # powers of two are allowed for reduced test configurations.
        max_size = 64 if self.arch == "dcgan" else 128
        if size > max_size:
            raise ConfigurationError(f"{self.arch} supports image_size <= {max_size}")
        if self.skip_connections and self.arch != "vgg_unet":
            raise ConfigurationError("skip_connections require arch=vgg_unet")
        if self.skip_connections and size < 16:
            raise ConfigurationError("skip_connections need image_size >= 16")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.image_size, self.image_size)

    @property
    def num_color_channels(self) -> int:
        return self.in_channels

    @property
    def latent_dim(self) -> int:
        return self.dim_hc + self.dim_hp


@dataclass
class SkipState:
    """Content-encoder activations kept for decoder skip connections.

    ``tensors`` is ordered shallow to deep; ``sizes`` holds the matching
    spatial resolutions.
    """

    tensors: tuple

    @property
    def sizes(self) -> tuple:
        return tuple(t.shape[-1] for t in self.tensors)


class UnitNorm(nn.Module):
    """Projects vectors onto the unit sphere; exact zero maps to zero."""

    def forward(self, x):
        return x / (x.norm(dim=1, keepdim=True) + NORM_EPS)


def _scaled(channels: int, mult: float) -> int:
    return max(1, int(round(channels * mult)))


def _init_weights(module: nn.Module, generator: torch.Generator) -> None:
    # DCGAN-convention init, made reproducible through an explicit generator.
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
                m.weight.normal_(1.0, 0.02, generator=generator)
                m.bias.zero_()


def _check_input(x, spec: NetworkSpec, what: str):
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise ConfigurationError(
            f"{what} expects input (B, {spec.in_channels}, {spec.image_size}, "
            f"{spec.image_size}), got {tuple(x.shape)}"
        )


def _dcgan_encoder_channels(size: int, mult: float) -> list[int]:
    n_halvings = int(math.log2(size)) - 2
    return [_scaled(min(512, 64 << i), mult) for i in range(n_halvings)]


def _dcgan_decoder_channels(size: int, mult: float) -> list[int]:
    n_stages = int(math.log2(size)) - 1
    return [_scaled(min(512, 32 << (n_stages - 1 - j)), mult) for j in range(n_stages)]


class DcganEncoder(nn.Module):
    """Strided 4x4 convolutions down to 1x1, ending in tanh + unit norm."""

    def __init__(self, spec: NetworkSpec, out_dim: int):
        super().__init__()
        self.spec = spec
        self.out_dim = out_dim
        layers = []
        prev = spec.in_channels
        for ch in _dcgan_encoder_channels(spec.image_size, spec.width_mult):
            layers += [
                nn.Conv2d(prev, ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            ]
            prev = ch
        layers += [
            nn.Conv2d(prev, out_dim, 4, stride=1, padding=0),
            nn.BatchNorm2d(out_dim),
            nn.Tanh(),
        ]
        self.body = nn.Sequential(*layers)
        self.normalize = UnitNorm()

    def forward(self, x):
        _check_input(x, self.spec, type(self).__name__)
        return self.normalize(self.body(x).flatten(1))


class VggEncoder(nn.Module):
    """Stacked 3x3 conv blocks with 2x2 pooling, optionally capturing the
    pre-pool activations of every block after the first as skip tensors."""

    def __init__(self, spec: NetworkSpec, out_dim: int, capture_skips: bool = False):
        super().__init__()
        self.spec = spec
        self.out_dim = out_dim
        self.capture_skips = capture_skips
        n_blocks = int(math.log2(spec.image_size)) - 2
        self.blocks = nn.ModuleList()
        prev = spec.in_channels
        for ch, n_convs in _VGG_PLAN[:n_blocks]:
            ch = _scaled(ch, spec.width_mult)
            convs = []
            for _ in range(n_convs):
                convs += [
                    nn.Conv2d(prev, ch, 3, stride=1, padding=1),
                    nn.BatchNorm2d(ch),
                    nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
                ]
                prev = ch
            self.blocks.append(nn.Sequential(*convs))
        self.pool = nn.MaxPool2d(2)
        self.head = nn.Sequential(
            nn.Conv2d(prev, out_dim, 4, stride=1, padding=0),
            nn.BatchNorm2d(out_dim),
            nn.Tanh(),
        )
        self.normalize = UnitNorm()

    def forward(self, x, return_skips: bool = False):
        _check_input(x, self.spec, type(self).__name__)
        skips = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if self.capture_skips and i >= 1:
                skips.append(x)
            x = self.pool(x)
        h = self.normalize(self.head(x).flatten(1))
        if return_skips:
            return h, SkipState(tensors=tuple(skips)) if self.capture_skips else None
        return h


class ContentEncoder(nn.Module):
    """Content branch; forward returns (vector, SkipState or None)."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        if spec.arch == "dcgan":
            self.backbone = DcganEncoder(spec, spec.dim_hc)
        else:
            self.backbone = VggEncoder(spec, spec.dim_hc, capture_skips=spec.skip_connections)

    def forward(self, x):
        if isinstance(self.backbone, VggEncoder):
            return self.backbone(x, return_skips=True)
        return self.backbone(x), None


class DcganDecoder(nn.Module):
    """Transposed-conv mirror of the encoder, sigmoid output in [0,1]."""

    def __init__(self, spec: NetworkSpec, latent_dim: int):
        super().__init__()
        self.spec = spec
        self.latent_dim = latent_dim
        chans = _dcgan_decoder_channels(spec.image_size, spec.width_mult)
        layers = [
            nn.ConvTranspose2d(latent_dim, chans[0], 4, stride=1, padding=0),
            nn.BatchNorm2d(chans[0]),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
        ]
        for prev, ch in zip(chans, chans[1:]):
            layers += [
                nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            ]
        layers += [nn.Conv2d(chans[-1], spec.num_color_channels, 3, stride=1, padding=1),
                   nn.Sigmoid()]
        self.body = nn.Sequential(*layers)

    def forward(self, content, pose, skips=None):
        if skips is not None:
            raise ConfigurationError("dcgan decoder takes no SkipState")
        z = _assemble_latent(content, pose, self.latent_dim)
        return self.body(z)


def _vgg_decoder_stage_plan(n_blocks: int, mult: float):
    """Per-upsampling-stage conv output channels, deepest stage first.

    The 5-block (128x128) plan mirrors the canonical layer listing; smaller
    configurations use one conv per stage.
    """
    if n_blocks == 5:
        raw = [(512, 512, 512), (512, 256), (128, 64), (64,)]
    else:
        raw = [(_VGG_PLAN[n_blocks - j - 1][0],) for j in range(1, n_blocks)]
    return [tuple(_scaled(c, mult) for c in stage) for stage in raw]


class VggDecoder(nn.Module):
    """Nearest-neighbor upsampling mirror of the VGG encoder; consumes skip
    tensors at the stages whose resolution matches the captured activations."""

    def __init__(self, spec: NetworkSpec, latent_dim: int):
        super().__init__()
        self.spec = spec
        self.latent_dim = latent_dim
        n_blocks = int(math.log2(spec.image_size)) - 2
        self.n_skip_stages = n_blocks - 1 if spec.skip_connections else 0
        # Skip tensors arrive shallow-to-deep; stages consume them deep-first.
        skip_chans = [_scaled(_VGG_PLAN[i][0], spec.width_mult) for i in range(1, n_blocks)][::-1]

        deep = _scaled(_VGG_PLAN[n_blocks - 1][0], spec.width_mult)
        self.entry = nn.Sequential(
            nn.ConvTranspose2d(latent_dim, deep, 4, stride=1, padding=0),
            nn.BatchNorm2d(deep),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
        )
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.stages = nn.ModuleList()
        prev = deep
        for j, stage_chans in enumerate(_vgg_decoder_stage_plan(n_blocks, spec.width_mult)):
            in_ch = prev + (skip_chans[j] if spec.skip_connections else 0)
            convs = []
            for ch in stage_chans:
                convs += [
                    nn.Conv2d(in_ch, ch, 3, stride=1, padding=1),
                    nn.BatchNorm2d(ch),
                    nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
                ]
                in_ch = ch
            self.stages.append(nn.Sequential(*convs))
            prev = stage_chans[-1]
        self.final = nn.Sequential(
            nn.Conv2d(prev, spec.num_color_channels, 3, stride=1, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, content, pose, skips=None):
        if self.spec.skip_connections:
            if skips is None or len(skips.tensors) != self.n_skip_stages:
                raise ConfigurationError(
                    f"decoder requires SkipState with {self.n_skip_stages} stages"
                )
            ordered = skips.tensors[::-1]
        elif skips is not None:
            raise ConfigurationError("decoder built without skip_connections got a SkipState")
        x = self.entry(_assemble_latent(content, pose, self.latent_dim))
        for j, stage in enumerate(self.stages):
            x = self.upsample(x)
            if self.spec.skip_connections:
                skip = ordered[j]
                if skip.shape[-1] != x.shape[-1]:
                    raise ConfigurationError(
                        f"skip stage {j} has spatial size {skip.shape[-1]}, "
                        f"expected {x.shape[-1]}"
                    )
                x = torch.cat([x, skip], dim=1)
            x = stage(x)
        return self.final(self.upsample(x))


def _assemble_latent(content, pose, latent_dim: int):
    # Latent enters the decoder as channels of a 1x1 spatial tensor.
    if content is None:
        z = pose
    elif pose is None:
        z = content
    else:
        if content.shape[0] != pose.shape[0]:
            raise ConfigurationError("content/pose batch sizes differ")
        z = torch.cat([content, pose], dim=1)
    if z.ndim != 2 or z.shape[1] != latent_dim:
        raise ConfigurationError(
            f"latent must be (B, {latent_dim}), got {tuple(z.shape)}"
        )
    return z.view(z.shape[0], latent_dim, 1, 1)


class SceneDiscriminator(nn.Module):
    """MLP over a concatenated pose pair; outputs P(same clip)."""

    def __init__(self, dim_hp: int, hidden: int = 100):
        super().__init__()
        if dim_hp < 1:
            raise ConfigurationError("dim_hp must be >= 1")
        self.dim_hp = dim_hp
        self.net = nn.Sequential(
            nn.Linear(2 * dim_hp, hidden),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            nn.Linear(hidden, hidden),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            nn.Linear(hidden, 1),
            nn.Sigmoid(),
        )

    def forward(self, pose_a, pose_b):
        if pose_a.shape != pose_b.shape:
            raise ConfigurationError(
                f"pose pair shapes differ: {tuple(pose_a.shape)} vs {tuple(pose_b.shape)}"
            )
        if pose_a.shape[1] != self.dim_hp:
            raise ConfigurationError(f"expected pose dim {self.dim_hp}, got {pose_a.shape[1]}")
        return self.net(torch.cat([pose_a, pose_b], dim=1)).squeeze(1)


class ClassifierHead(nn.Module):
    """Two fully connected layers with batch norm, leaky ReLU, and dropout
    in the hidden layer; forward returns a softmax class distribution."""

    def __init__(self, input_dim: int, hidden: int, num_classes: int, dropout: float = 0.5):
        super().__init__()
        if min(input_dim, hidden, num_classes) < 1:
            raise ConfigurationError("classifier dims must be >= 1")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.hidden_layer = nn.Sequential(
            nn.Linear(input_dim, hidden),
            nn.BatchNorm1d(hidden),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            nn.Dropout(dropout),
        )
        self.out = nn.Linear(hidden, num_classes)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(f"expected (B, {self.input_dim}), got {tuple(x.shape)}")
        return torch.softmax(self.out(self.hidden_layer(x)), dim=1)


class PoseForecaster(nn.Module):
    """Two-layer LSTM that maps (previous pose, fixed content) to the next
    pose, renormalized to the unit sphere."""

    def __init__(self, pose_dim: int, content_dim: int, hidden_size: int = 256,
                 num_layers: int = 2):
        super().__init__()
        self.pose_dim = pose_dim
        self.content_dim = content_dim
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.lstm = nn.LSTM(pose_dim + content_dim, hidden_size, num_layers)
        self.head = nn.Linear(hidden_size, pose_dim)
        self.normalize = UnitNorm()
        self.observe_len = None
        self.predict_len = None
        self.trained = False

    def step(self, pose, content=None, state=None):
        """One recurrent step on a (B, pose_dim) pose; returns (next pose, state)."""
        if self.content_dim > 0:
            if content is None or content.shape[1] != self.content_dim:
                raise ConfigurationError(f"forecaster needs content of dim {self.content_dim}")
            inp = torch.cat([pose, content], dim=1)
        else:
            inp = pose
        out, state = self.lstm(inp.unsqueeze(0), state)
        return self.normalize(self.head(out.squeeze(0))), state


def build_content_encoder(spec: NetworkSpec, seed: int) -> ContentEncoder:
    enc = ContentEncoder(spec)
    _init_weights(enc, torch.Generator().manual_seed(seed))
    return enc


def build_pose_encoder(spec: NetworkSpec, seed: int):
    if spec.arch == "dcgan":
        enc = DcganEncoder(spec, spec.dim_hp)
    else:
        enc = VggEncoder(spec, spec.dim_hp, capture_skips=False)
    _init_weights(enc, torch.Generator().manual_seed(seed))
    return enc


def build_single_encoder(spec: NetworkSpec, seed: int):
    """Encoder with a single entangled latent of dim_hc + dim_hp (baseline)."""
    if spec.arch == "dcgan":
        enc = DcganEncoder(spec, spec.latent_dim)
    else:
        enc = VggEncoder(spec, spec.latent_dim, capture_skips=False)
    _init_weights(enc, torch.Generator().manual_seed(seed))
    return enc


def build_decoder(spec: NetworkSpec, seed: int):
    if spec.arch == "dcgan":
        dec = DcganDecoder(spec, spec.latent_dim)
    else:
        dec = VggDecoder(spec, spec.latent_dim)
    _init_weights(dec, torch.Generator().manual_seed(seed))
    return dec


def build_scene_discriminator(dim_hp: int, seed: int, hidden: int = 100) -> SceneDiscriminator:
    disc = SceneDiscriminator(dim_hp, hidden=hidden)
    _init_weights(disc, torch.Generator().manual_seed(seed))
    return disc


def build_classifier(input_dim: int, hidden: int, num_classes: int, seed: int,
                     dropout: float = 0.5) -> ClassifierHead:
    clf = ClassifierHead(input_dim, hidden, num_classes, dropout=dropout)
    _init_weights(clf, torch.Generator().manual_seed(seed))
    return clf


def build_forecaster(pose_dim: int, content_dim: int, seed: int, hidden_size: int = 256,
                     num_layers: int = 2) -> PoseForecaster:
    model = PoseForecaster(pose_dim, content_dim, hidden_size=hidden_size,
                           num_layers=num_layers)
    g = torch.Generator().manual_seed(seed)
    stdv = 1.0 / math.sqrt(hidden_size)
    with torch.no_grad():
        for p in model.parameters():
            p.uniform_(-stdv, stdv, generator=g)
    return model


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
