"""Unidirectional multi-layer GRU decoder emitting one character per step.

Each step consumes the attention context concatenated with the embedding
of the previous character (plus, under candidate fusion, the language
model's previous prediction block) and updates the stacked recurrent
state.  The output head is a single linear projection of the top layer;
the "conventional" unit style additionally concatenates the context
vector before the projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
from torch import nn

from .errors import DimensionMismatch, IndexOutOfRange, InvalidConfig


@dataclass
class DecoderConfig:
    state_dim: int = 256
    layers: int = 2
    max_steps: Optional[int] = None     # None -> derived from training data
    unit_style: str = "proposed"        # "proposed" | "conventional"
    embedding_dim: int = 128
    label_smoothing: float = 0.1
    dropout: float = 0.5

    def validate(self) -> None:
        if self.state_dim < 1 or self.layers < 1 or self.embedding_dim < 1:
            raise InvalidConfig("state_dim, layers and embedding_dim must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise InvalidConfig("max_steps must be >= 1")
        if self.unit_style not in ("proposed", "conventional"):
            raise InvalidConfig(f"unknown unit_style {self.unit_style!r}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidConfig("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must be in [0, 1)")


class CharDecoder(nn.Module):
    """Stacked GRU cell over [context, prev-char embedding(, LM block)].

    ``lm_input_dim`` widens the recurrent input for candidate fusion;
    ``input_batchnorm`` adds a batch-norm over the full concatenated input
    (the "no activation + batch norm" injection).
    """

    def __init__(self, vocab_size: int, feature_dim: int, cfg: DecoderConfig,
                 lm_input_dim: int = 0, input_batchnorm: bool = False):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.feature_dim = feature_dim
        self.lm_input_dim = lm_input_dim
        self.input_size = feature_dim + cfg.embedding_dim + lm_input_dim

        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim)
        self.gru = nn.GRU(self.input_size, cfg.state_dim, cfg.layers, batch_first=True,
                          dropout=cfg.dropout if cfg.layers > 1 else 0.0)
        out_in = cfg.state_dim + (feature_dim if cfg.unit_style == "conventional" else 0)
        self.out = nn.Linear(out_in, vocab_size)
        self.input_bn = nn.BatchNorm1d(self.input_size) if input_batchnorm else None

    def initial_state(self, batch_size: int, dtype=None, device=None) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(self.cfg.layers, batch_size, self.cfg.state_dim,
                           dtype=dtype or p.dtype, device=device or p.device)

    def embed_token(self, y) -> torch.Tensor:
        """Embedding row(s) for index/indices ``y``; bounds-checked."""
        y = torch.as_tensor(y, dtype=torch.long, device=self.embedding.weight.device)
        if y.numel() and (int(y.min()) < 0 or int(y.max()) >= self.vocab_size):
            raise IndexOutOfRange(f"token index out of range [0, {self.vocab_size})")
        return self.embedding(y)

    def run_cell(self, x: torch.Tensor, s_prev: torch.Tensor) -> torch.Tensor:
        """One recurrent update of the full stack on input rows x (B, input_size)."""
        if x.dim() != 2 or x.shape[1] != self.input_size:
            raise DimensionMismatch(f"input has shape {tuple(x.shape)}, expected (B, {self.input_size})")
        if s_prev.shape != (self.cfg.layers, x.shape[0], self.cfg.state_dim):
            raise DimensionMismatch(
                f"state has shape {tuple(s_prev.shape)}, expected "
                f"({self.cfg.layers}, {x.shape[0]}, {self.cfg.state_dim})")
        _, s_new = self.gru(x.unsqueeze(1), s_prev)
        return s_new

    def step(self, context: torch.Tensor, y_prev_emb: torch.Tensor,
             s_prev: torch.Tensor) -> torch.Tensor:
        """Fusion-free update on [context, previous embedding]."""
        if self.lm_input_dim != 0:
            raise DimensionMismatch(
                "this decoder was built with an LM input block; use candidate_step")
        if context.shape[-1] != self.feature_dim or y_prev_emb.shape[-1] != self.cfg.embedding_dim:
            raise DimensionMismatch(
                f"context/embedding widths ({context.shape[-1]}, {y_prev_emb.shape[-1]}) "
                f"!= ({self.feature_dim}, {self.cfg.embedding_dim})")
        return self.run_cell(torch.cat([context, y_prev_emb], dim=-1), s_prev)

    def predict(self, s: torch.Tensor, context: Optional[torch.Tensor] = None
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Logits over the vocabulary plus the greedy indices (first index wins ties)."""
        top = s[-1] if s.dim() == 3 else s
        if self.cfg.unit_style == "conventional":
            if context is None:
                raise DimensionMismatch("conventional unit style needs the context vector")
            top = torch.cat([top, context], dim=-1)
        logits = self.out(top)
        return logits, logits.max(dim=-1).indices


def smoothed_cross_entropy(logits: torch.Tensor, targets: torch.Tensor,
                           epsilon: float, ignore_index: Optional[int] = None) -> torch.Tensor:
    """Cross entropy against (1 - eps) on the target and eps/(K-1) on the rest.

    Reduces to standard cross entropy at eps = 0.  Positions whose target
    equals ``ignore_index`` are excluded from the mean.
    """
    k = logits.shape[-1]
    logits = logits.reshape(-1, k)
    targets = targets.reshape(-1)
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(1, targets.unsqueeze(1)).squeeze(1)
    if epsilon > 0.0:
        spread = epsilon / (k - 1)
        loss = (1.0 - epsilon - spread) * nll - spread * logp.sum(dim=-1)
    else:
        loss = nll
    if ignore_index is not None:
        keep = targets != ignore_index
        loss = loss[keep]
    return loss.mean()


def decode_greedy(H: torch.Tensor, model, fusion=None,
                  lengths: Optional[torch.Tensor] = None,
                  max_steps: Optional[int] = None):
    """Greedy decoding from encoder features; see Recognizer.greedy_from_features.

    Starts from GO, iterates attend -> recurrent step -> predict (routing
    through the language model when fusion is active), and stops per
    sample at END or after the step cap.  Returns one DecodeResult per
    batch row with the stack of attention masks.
    """
    return model.greedy_from_features(H, lengths=lengths, fusion=fusion, max_steps=max_steps)
