"""Encoder-decoder segmentation student with dual bottleneck latents.

Four encoder stages (two 3x3 convs + ReLU, then 2x2 maxpool) halve the
resolution each step along a strictly increasing channel ladder. From
the deepest feature f4, a 1x1 conv extracts the semantic latent l1 and
a 3x3 conv over l1 extracts the structural latent l2. The decoder
concatenates (f4, l1, l2), then walks back up with nearest-x2 + conv
expansion and skip connections, ending in a 1x1 conv + sigmoid
probability map at input resolution.

Two linear 1x1 projection heads map l1/l2 to the fused teacher channel
count for distillation; they are the only parameters a pure
segmentation twin does not need, and inference never touches teacher
data.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor4
from .errors import DimensionError


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    latent_channels: int = 32
    d_star: int = 16

    def __post_init__(self):
        if len(self.channels) != 4:
            raise DimensionError("channels", f"need a 4-stage ladder, got {self.channels}")
        if any(c < 1 for c in self.channels) or self.latent_channels < 1 or self.d_star < 1:
            raise DimensionError("channels", "all channel counts must be >= 1")
        if list(self.channels) != sorted(set(self.channels)):
            raise DimensionError("channels", f"ladder must be strictly increasing: {self.channels}")
        if self.input_size % 16 != 0 or self.input_size < 16:
            raise DimensionError(
                "height", f"input_size must be a positive multiple of 16, got {self.input_size}"
            )

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        return cls(input_size=352, channels=(64, 128, 256, 512), latent_channels=256, d_star=1536)


@dataclass
class EncoderFeatures:
    f1: Tensor4
    f2: Tensor4
    f3: Tensor4
    f4: Tensor4


@dataclass
class StudentLatents:
    l1: Tensor4
    l2: Tensor4


PROJECTION_NAMES = ("proj1.w", "proj1.b", "proj2.w", "proj2.b")


class StudentNet:
    """Holds named parameters and wires the forward graph on the active tape."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._rng = np.random.default_rng(seed)
        c1, c2, c3, c4 = config.channels
        lat, d_star = config.latent_channels, config.d_star

        prev = 3
        for i, c in enumerate(config.channels, start=1):
            self._add_conv(f"enc{i}a", prev, c, 3)
            self._add_conv(f"enc{i}b", c, c, 3)
            prev = c
        self._add_conv("lat1", c4, lat, 1)
        self._add_conv("lat2", lat, lat, 3)
        self._add_conv("proj1", lat, d_star, 1)
        self._add_conv("proj2", lat, d_star, 1)
        self._add_conv("bota", c4 + 2 * lat, c4, 3)
        self._add_conv("botb", c4, c4, 3)
        for i, (c_out, c_in) in zip((3, 2, 1), ((c3, c4), (c2, c3), (c1, c2))):
            self._add_conv(f"dec{i}up", c_in, c_out, 3)
            self._add_conv(f"dec{i}a", 2 * c_out, c_out, 3)
            self._add_conv(f"dec{i}b", c_out, c_out, 3)
        self._add_conv("heada", c1, c1, 3)
        self._add_conv("head", c1, 1, 1)
        del self._rng

    def _add_conv(self, name: str, c_in: int, c_out: int, k: int) -> None:
        bound = np.sqrt(6.0 / (c_in * k * k))
        w = self._rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
        self.params[f"{name}.w"] = Parameter(w)
        self.params[f"{name}.b"] = Parameter(np.zeros((1, c_out, 1, 1), dtype=np.float32))

    def _conv(self, name: str, x: Tensor4, padding: int, act: bool = True) -> Tensor4:
        out = ad.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], padding=padding)
        return ad.relu(out) if act else out

    # ---------------------------------------------------------------- forward

    def encode(self, image: Tensor4) -> tuple[EncoderFeatures, StudentLatents]:
        b, c, h, w = image.shape
        if c != 3:
            raise DimensionError("channels", f"expected a 3-channel image, got {c}")
        if h != self.config.input_size or w != self.config.input_size:
            raise DimensionError(
                "height", f"expected {self.config.input_size}px input, got {h}x{w}"
            )
        feats = []
        x = image
        for i in range(1, 5):
            x = self._conv(f"enc{i}a", x, padding=1)
            x = self._conv(f"enc{i}b", x, padding=1)
            x = ad.maxpool2(x)
            feats.append(x)
        l1 = self._conv("lat1", feats[3], padding=0)
        l2 = self._conv("lat2", l1, padding=1)
        return EncoderFeatures(*feats), StudentLatents(l1=l1, l2=l2)

    def project_latents(
        self, latents: StudentLatents, d_star: int, target_resolution: int
    ) -> tuple[Tensor4, Tensor4]:
        """Map l1/l2 to teacher channel count and teacher resolution."""
        if d_star != self.config.d_star:
            raise DimensionError(
                "channels",
                f"teacher bundle has d_star={d_star}, projections emit {self.config.d_star}",
            )
        p1 = self._conv("proj1", latents.l1, padding=0, act=False)
        p2 = self._conv("proj2", latents.l2, padding=0, act=False)
        p1 = ad.bilinear_resize(p1, target_resolution, target_resolution)
        p2 = ad.bilinear_resize(p2, target_resolution, target_resolution)
        return p1, p2

    def decode(self, feats: EncoderFeatures, latents: StudentLatents) -> Tensor4:
        x = ad.concat_channels([feats.f4, latents.l1, latents.l2])
        x = self._conv("bota", x, padding=1)
        x = self._conv("botb", x, padding=1)
        for i, skip in ((3, feats.f3), (2, feats.f2), (1, feats.f1)):
            x = ad.upsample2(x)
            x = self._conv(f"dec{i}up", x, padding=1)
            x = ad.concat_channels([x, skip])
            x = self._conv(f"dec{i}a", x, padding=1)
            x = self._conv(f"dec{i}b", x, padding=1)
        x = ad.upsample2(x)
        x = self._conv("heada", x, padding=1)
        logits = self._conv("head", x, padding=0, act=False)
        return ad.sigmoid(logits)

    def forward(self, image: Tensor4) -> tuple[Tensor4, EncoderFeatures, StudentLatents]:
        feats, latents = self.encode(image)
        return self.decode(feats, latents), feats, latents

    # ------------------------------------------------------------ parameters

    def encoder_param_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("enc")]

    def set_encoder_trainable(self, trainable: bool) -> None:
        for name in self.encoder_param_names():
            self.params[name].set_trainable(trainable)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_count(self, include_projections: bool = True) -> int:
        total = 0
        for name, p in self.params.items():
            if not include_projections and name in PROJECTION_NAMES:
                continue
            total += p.value.size
        return total
