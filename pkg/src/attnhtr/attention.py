"""Content- and location-based attention over encoder feature sequences.

Content scoring is additive attention: e_i = w . tanh(W h_i + V s + b).
Location scoring adds a term derived from the previous attention mask:
the mask is convolved with a learned 1-D kernel bank (r channels, odd
width k, zero padding), giving per-position location features l_i, and
e_i = w . tanh(W h_i + V s + U l_i + b).  The mask itself is a stable
softmax over the energies and the context vector is the mask-weighted sum
of the features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import math
import torch
from torch import nn

from .errors import DimensionMismatch, InvalidConfig


@dataclass
class AttentionConfig:
    variant: str = "location"          # "content" | "location"
    attn_dim: Optional[int] = None     # None -> match decoder state_dim
    location_kernel_size: int = 11     # k, odd so the convolution is centered
    location_channels: int = 8         # r

    def validate(self) -> None:
        if self.variant not in ("content", "location"):
            raise InvalidConfig(f"unknown attention variant {self.variant!r}")
        if self.location_kernel_size % 2 != 1 or self.location_kernel_size < 1:
            raise InvalidConfig(f"location kernel size must be odd, got {self.location_kernel_size}")
        if self.location_channels < 1:
            raise InvalidConfig("location_channels must be >= 1")


class AttentionParams(nn.Module):
    """Trainable parameters w, W, V, U, b and the location kernel bank F."""

    def __init__(self, feature_dim: int, state_dim: int, attn_dim: Optional[int] = None,
                 kernel_size: int = 11, channels: int = 8):
        super().__init__()
        if kernel_size % 2 != 1:
            raise InvalidConfig(f"kernel_size must be odd, got {kernel_size}")
        attn_dim = attn_dim or state_dim
        self.feature_dim = feature_dim
        self.state_dim = state_dim
        self.attn_dim = attn_dim
        self.kernel_size = kernel_size
        self.channels = channels

        bound = 1.0 / math.sqrt(attn_dim)
        self.w = nn.Parameter(torch.empty(attn_dim).uniform_(-bound, bound))
        self.W = nn.Parameter(torch.empty(attn_dim, feature_dim).uniform_(-bound, bound))
        self.V = nn.Parameter(torch.empty(attn_dim, state_dim).uniform_(-bound, bound))
        self.U = nn.Parameter(torch.empty(attn_dim, channels).uniform_(-bound, bound))
        self.b = nn.Parameter(torch.zeros(attn_dim))
        self.F = nn.Parameter(torch.empty(channels, 1, kernel_size).uniform_(-bound, bound))


def _top_state(s: torch.Tensor, state_dim: int) -> torch.Tensor:
    """Accept (B, state_dim) or (layers, B, state_dim); use the top layer."""
    if s.dim() == 3:
        s = s[-1]
    if s.dim() != 2 or s.shape[-1] != state_dim:
        raise DimensionMismatch(f"decoder state has shape {tuple(s.shape)}, expected (B, {state_dim})")
    return s


def score_content(H: torch.Tensor, s_prev: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    """Energies e (B, N) from features H (B, N, feature_dim) and the previous state."""
    if H.dim() != 3 or H.shape[-1] != p.feature_dim:
        raise DimensionMismatch(f"features have shape {tuple(H.shape)}, expected (B, N, {p.feature_dim})")
    s = _top_state(s_prev, p.state_dim)
    if s.shape[0] != H.shape[0]:
        raise DimensionMismatch(f"batch mismatch: features {H.shape[0]} vs state {s.shape[0]}")
    hidden = torch.tanh(H @ p.W.T + (s @ p.V.T).unsqueeze(1) + p.b)
    return hidden @ p.w


def score_location(H: torch.Tensor, s_prev: torch.Tensor, alpha_prev: torch.Tensor,
                   p: AttentionParams) -> torch.Tensor:
    """Content energies plus a term from the convolved previous mask."""
    if H.dim() != 3 or H.shape[-1] != p.feature_dim:
        raise DimensionMismatch(f"features have shape {tuple(H.shape)}, expected (B, N, {p.feature_dim})")
    if alpha_prev.dim() != 2 or alpha_prev.shape != H.shape[:2]:
        raise DimensionMismatch(
            f"previous mask has shape {tuple(alpha_prev.shape)}, expected {tuple(H.shape[:2])}")
    s = _top_state(s_prev, p.state_dim)
    loc = nn.functional.conv1d(alpha_prev.unsqueeze(1), p.F, padding=(p.kernel_size - 1) // 2)
    loc = loc.transpose(1, 2)                      # (B, N, r)
    hidden = torch.tanh(H @ p.W.T + (s @ p.V.T).unsqueeze(1) + loc @ p.U.T + p.b)
    return hidden @ p.w


def attend(energies: torch.Tensor, H: torch.Tensor,
           mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Softmax the energies into a mask and form the context vector.

    ``mask`` (B, N, bool) marks valid feature positions; padded columns
    get -inf energy.  The softmax subtracts the row max for stability.
    """
    if energies.shape != H.shape[:2]:
        raise DimensionMismatch(
            f"energies {tuple(energies.shape)} do not match features {tuple(H.shape[:2])}")
    if mask is not None:
        energies = energies.masked_fill(~mask, float("-inf"))
    shifted = energies - energies.max(dim=-1, keepdim=True).values
    exp = torch.exp(shifted)
    alpha = exp / exp.sum(dim=-1, keepdim=True)
    context = torch.bmm(alpha.unsqueeze(1), H).squeeze(1)
    return alpha, context
