"""Image encoder: CNN feature extraction plus positional information.

A word image (1 x H x W, ink-dark floats in [0, 1]) is passed through a
convolutional stack, the resulting map is collapsed column-wise (each
column's height x channels block is flattened and linearly projected to
``feature_dim``), and order information is supplied either by adding
sinusoidal position codes or by a bidirectional GRU whose forward and
backward outputs are summed.  The output is a feature sequence whose
length N is the input width divided by the backbone's horizontal
downsampling factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import ImageTooNarrow, InvalidConfig, OddFeatureDim

# Backbone layouts: integers are 3x3/pad-1 conv output channels, "M" is a
# 2x2 max-pool.  "small" is the desk-scale default; "vgg19bn" mirrors the
# 19-layer batch-norm VGG feature stack; "tiny" is a single conv for
# numeric tests.
_BACKBONES = {
    "tiny": [8, "M"],
    "small": [16, "M", 32, "M", 48, 64, "M", 80, 96, "M"],
    "vgg19bn": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
                512, 512, 512, 512, "M", 512, 512, 512, 512, "M"],
}
# Only "tiny" skips batch norm so its gradient path stays elementary.
_PLAIN_BACKBONES = {"tiny"}


@dataclass
class EncoderConfig:
    backbone: str = "small"
    positional_mode: str = "recurrent"  # "positional_encoding" | "recurrent"
    feature_dim: int = 256
    recurrent_layers: int = 2
    dropout: float = 0.5
    input_height: int = 64

    def validate(self) -> None:
        if self.backbone not in _BACKBONES:
            raise InvalidConfig(f"unknown backbone {self.backbone!r}; choose from {sorted(_BACKBONES)}")
        if self.positional_mode not in ("positional_encoding", "recurrent"):
            raise InvalidConfig(f"unknown positional_mode {self.positional_mode!r}")
        if self.feature_dim <= 0:
            raise InvalidConfig("feature_dim must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must be in [0, 1)")
        if self.input_height < 1:
            raise InvalidConfig("input_height must be >= 1")

    @property
    def horizontal_stride(self) -> int:
        return 2 ** _BACKBONES[self.backbone].count("M")


def feature_length(width: int, cfg: EncoderConfig) -> int:
    """Number of output columns for an input of ``width`` pixels."""
    n = width
    for item in _BACKBONES[cfg.backbone]:
        if item == "M":
            n = n // 2
    if n < 1:
        raise ImageTooNarrow(
            f"width {width} yields no feature column (backbone stride {cfg.horizontal_stride})")
    return n


def positional_encode(seq: torch.Tensor) -> torch.Tensor:
    """Add interleaved sin/cos position codes along the sequence axis.

    Accepts (N, D) or (B, N, D); D must be even.  Position 0 contributes
    (0, 1, 0, 1, ...), so zero features map onto the raw code table.
    """
    d = seq.shape[-1]
    if d % 2 != 0:
        raise OddFeatureDim(f"feature_dim must be even for positional codes, got {d}")
    n = seq.shape[-2]
    pos = torch.arange(n, dtype=seq.dtype, device=seq.device).unsqueeze(1)
    i = torch.arange(d // 2, dtype=seq.dtype, device=seq.device).unsqueeze(0)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=seq.dtype, device=seq.device), 2 * i / d)
    code = torch.zeros(n, d, dtype=seq.dtype, device=seq.device)
    code[:, 0::2] = torch.sin(angle)
    code[:, 1::2] = torch.cos(angle)
    return seq + code


class ImageEncoder(nn.Module):
    """CNN backbone -> column features -> positional encoding or BGRU."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg

        layers: List[nn.Module] = []
        channels = 1
        height = cfg.input_height
        use_bn = cfg.backbone not in _PLAIN_BACKBONES
        for item in _BACKBONES[cfg.backbone]:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
                height = height // 2
            else:
                layers.append(nn.Conv2d(channels, item, kernel_size=3, padding=1))
                if use_bn:
                    layers.append(nn.BatchNorm2d(item))
                layers.append(nn.ReLU(inplace=True))
                channels = item
        if height < 1:
            raise InvalidConfig(
                f"input_height {cfg.input_height} collapses to zero rows in backbone {cfg.backbone!r}")
        self.cnn = nn.Sequential(*layers)
        self.column_dim = channels * height
        self.project = nn.Linear(self.column_dim, cfg.feature_dim)

        if cfg.positional_mode == "recurrent":
            self.rnn = nn.GRU(
                cfg.feature_dim, cfg.feature_dim, cfg.recurrent_layers,
                batch_first=True, bidirectional=True,
                dropout=cfg.dropout if cfg.recurrent_layers > 1 else 0.0)
        else:
            self.rnn = None

    def forward(self, images: torch.Tensor, widths: Optional[Sequence[int]] = None
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Encode (B, 1, H, W) images into (B, N, feature_dim) plus per-sample lengths."""
        if images.dim() != 4 or images.shape[1] != 1:
            raise InvalidConfig(f"expected (B, 1, H, W) images, got {tuple(images.shape)}")
        if images.shape[2] != self.cfg.input_height:
            raise InvalidConfig(
                f"image height {images.shape[2]} != configured input_height {self.cfg.input_height}")
        if widths is None:
            widths = [images.shape[3]] * images.shape[0]
        lengths = torch.tensor([feature_length(int(w), self.cfg) for w in widths],
                               dtype=torch.long, device=images.device)

        fmap = self.cnn(images)                    # (B, C, H', N)
        b, c, h, n = fmap.shape
        columns = fmap.permute(0, 3, 1, 2).reshape(b, n, c * h)
        features = self.project(columns)           # (B, N, D)

        if self.rnn is not None:
            out, _ = self.rnn(features)
            d = self.cfg.feature_dim
            features = out[..., :d] + out[..., d:]  # sum forward/backward halves
        else:
            features = positional_encode(features)
        return features, lengths

    @torch.no_grad()
    def encode_image(self, img: np.ndarray) -> torch.Tensor:
        """Convenience: single 2-D float image -> (N, feature_dim), eval mode."""
        was_training = self.training
        self.eval()
        try:
            x = torch.as_tensor(img, dtype=next(self.parameters()).dtype)
            features, _ = self.forward(x.unsqueeze(0).unsqueeze(0), [img.shape[1]])
        finally:
            self.train(was_training)
        return features[0]
