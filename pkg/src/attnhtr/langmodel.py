"""Character language model and the three fusion strategies.

The LM is a small recurrent next-character model pre-trained on plain
text.  Fusion options:

* shallow: post-hoc per step, argmax over softmax(recognizer) +
  beta * softmax(LM); no gradients flow.
* deep: recognizer state, LM state and context are concatenated into a
  trainable two-layer output head; recognizer and LM pipelines stay
  separate (LM frozen by default).
* candidate: the LM's previous prediction vector becomes a third decoder
  input, so the whole system is jointly trainable and the recognizer can
  weigh or ignore the LM's advice.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple, Union

import torch
from torch import nn

from .decoder import CharDecoder
from .errors import DimensionMismatch, EmptyCorpus, IndexOutOfRange, InvalidConfig
from .vocab import Vocabulary

log = logging.getLogger(__name__)

INJECTIONS = ("softmax", "sigmoid", "embedding", "raw", "raw_batchnorm")
FUSION_MODES = ("none", "shallow", "deep", "candidate")


@dataclass
class LMConfig:
    embedding_dim: int = 128
    state_dim: int = 256
    layers: int = 2
    dropout: float = 0.0

    def validate(self) -> None:
        if self.embedding_dim < 1 or self.state_dim < 1 or self.layers < 1:
            raise InvalidConfig("LM dims and layer count must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("LM dropout must be in [0, 1)")


@dataclass
class FusionConfig:
    mode: str = "none"
    shallow_weight: float = 0.3         # beta; only used by shallow fusion
    injection: str = "raw_batchnorm"    # only used by candidate fusion
    lm_trainable: bool = True           # candidate fusion: fine-tune the LM jointly
    deep_hidden: int = 256
    lm_checkpoint: Optional[str] = None
    lm: LMConfig = field(default_factory=LMConfig)

    def validate(self) -> None:
        if self.mode not in FUSION_MODES:
            raise InvalidConfig(f"unknown fusion mode {self.mode!r}")
        if self.injection not in INJECTIONS:
            raise InvalidConfig(f"unknown injection {self.injection!r}")
        if self.shallow_weight < 0:
            raise InvalidConfig("shallow_weight must be >= 0")
        self.lm.validate()


@dataclass
class LMOutput:
    """Raw next-character logits and their argmax."""

    logits: torch.Tensor  # (B, vocab)

    @property
    def best(self) -> torch.Tensor:
        return self.logits.max(dim=-1).indices


class CharLM(nn.Module):
    """Embedding -> stacked GRU -> projection to vocabulary logits."""

    def __init__(self, vocab_size: int, cfg: LMConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, cfg.embedding_dim)
        self.gru = nn.GRU(cfg.embedding_dim, cfg.state_dim, cfg.layers, batch_first=True,
                          dropout=cfg.dropout if cfg.layers > 1 else 0.0)
        self.proj = nn.Linear(cfg.state_dim, vocab_size)

    def initial_state(self, batch_size: int, dtype=None, device=None) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(self.cfg.layers, batch_size, self.cfg.state_dim,
                           dtype=dtype or p.dtype, device=device or p.device)

    def forward(self, indices: torch.Tensor, state: Optional[torch.Tensor] = None):
        """Teacher-style pass over (B, T) indices -> (B, T, vocab) logits."""
        emb = self.embedding(indices)
        out, state = self.gru(emb, state)
        return self.proj(out), state


def lm_step(y_prev, s_prev: torch.Tensor, lm: CharLM) -> Tuple[LMOutput, torch.Tensor]:
    """One recurrent step: previous character index -> next-character logits."""
    y_prev = torch.as_tensor(y_prev, dtype=torch.long, device=lm.proj.weight.device)
    if y_prev.dim() == 0:
        y_prev = y_prev.unsqueeze(0)
    if y_prev.numel() and (int(y_prev.min()) < 0 or int(y_prev.max()) >= lm.vocab_size):
        raise IndexOutOfRange(f"LM input index out of range [0, {lm.vocab_size})")
    logits, state = lm(y_prev.unsqueeze(1), s_prev)
    return LMOutput(logits=logits[:, 0, :]), state


@dataclass
class PretrainResult:
    model: CharLM
    perplexity: float
    epoch_losses: List[float]


def lm_pretrain(corpus: Union[str, Iterable[str]], vocabulary: Vocabulary,
                cfg: Optional[LMConfig] = None, epochs: int = 5, window: int = 64,
                batch_size: int = 64, learning_rate: float = 2e-3,
                seed: int = 0) -> PretrainResult:
    """Train a next-character model on sliding windows of the corpus.

    Characters outside the vocabulary are dropped with a logged warning.
    Returns the trained model with the final-epoch training perplexity.
    """
    cfg = cfg or LMConfig()
    if isinstance(corpus, str):
        corpus = [corpus]
    indices: List[int] = []
    dropped = 0
    for chunk in corpus:
        for ch in chunk:
            idx = vocabulary.char_to_index.get(ch)
            if idx is None:
                dropped += 1
            else:
                indices.append(idx)
    if dropped:
        log.warning("lm_pretrain: dropped %d characters outside the vocabulary", dropped)
    if len(indices) < 2:
        raise EmptyCorpus("corpus has fewer than 2 in-vocabulary characters")

    torch.manual_seed(seed)
    model = CharLM(vocabulary.size, cfg)
    stream = torch.tensor(indices, dtype=torch.long)
    starts = list(range(0, len(indices) - 1, window))
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    criterion = nn.CrossEntropyLoss()

    epoch_losses: List[float] = []
    model.train()
    for _ in range(epochs):
        perm = torch.randperm(len(starts))
        total, count = 0.0, 0
        for b in range(0, len(starts), batch_size):
            chosen = [starts[int(i)] for i in perm[b:b + batch_size]]
            inputs = torch.stack([_window(stream, s, window) for s in chosen])
            targets = torch.stack([_window(stream, s + 1, window) for s in chosen])
            logits, _ = model(inputs)
            loss = criterion(logits.reshape(-1, model.vocab_size), targets.reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(chosen)
            count += len(chosen)
        epoch_losses.append(total / count)
    model.eval()
    perplexity = float(torch.exp(torch.tensor(epoch_losses[-1])))
    log.info("lm_pretrain: final training perplexity %.3f", perplexity)
    return PretrainResult(model=model, perplexity=perplexity, epoch_losses=epoch_losses)


def _window(stream: torch.Tensor, start: int, width: int) -> torch.Tensor:
    chunk = stream[start:start + width]
    if len(chunk) < width:  # pad the tail window by wrapping
        chunk = torch.cat([chunk, stream[:width - len(chunk)]])
    return chunk


def fuse_shallow(recognizer_logits: torch.Tensor, lm_logits: torch.Tensor,
                 beta: float) -> torch.Tensor:
    """argmax of softmax(recognizer) + beta * softmax(LM); purely post-hoc."""
    if recognizer_logits.shape != lm_logits.shape:
        raise DimensionMismatch(
            f"logit shapes differ: {tuple(recognizer_logits.shape)} vs {tuple(lm_logits.shape)}")
    with torch.no_grad():
        mixed = torch.softmax(recognizer_logits, dim=-1) + beta * torch.softmax(lm_logits, dim=-1)
        return mixed.max(dim=-1).indices


class DeepFusionHead(nn.Module):
    """concat(decoder top state, LM top state, context) -> linear -> tanh -> vocab logits."""

    def __init__(self, state_dim: int, lm_state_dim: int, feature_dim: int,
                 hidden: int, vocab_size: int):
        super().__init__()
        self.state_dim = state_dim
        self.lm_state_dim = lm_state_dim
        self.feature_dim = feature_dim
        self.fc1 = nn.Linear(state_dim + lm_state_dim + feature_dim, hidden)
        self.fc2 = nn.Linear(hidden, vocab_size)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.tanh(self.fc1(fused)))


def fuse_deep(s: torch.Tensor, s_lm: torch.Tensor, context: torch.Tensor,
              head: DeepFusionHead) -> torch.Tensor:
    """Feature-level fusion of recognizer and LM states into output logits."""
    top = s[-1] if s.dim() == 3 else s
    lm_top = s_lm[-1] if s_lm.dim() == 3 else s_lm
    if top.shape[-1] != head.state_dim or lm_top.shape[-1] != head.lm_state_dim \
            or context.shape[-1] != head.feature_dim:
        raise DimensionMismatch(
            f"deep fusion widths ({top.shape[-1]}, {lm_top.shape[-1]}, {context.shape[-1]}) "
            f"!= ({head.state_dim}, {head.lm_state_dim}, {head.feature_dim})")
    return head(torch.cat([top, lm_top, context], dim=-1))


def inject_activation(p_lm: torch.Tensor, variant: str,
                      embedding: Optional[nn.Embedding] = None) -> torch.Tensor:
    """Map raw LM logits to the vector that enters the decoder input.

    softmax/sigmoid squash the logits; "embedding" looks up the embedding
    of the LM's best hypothesis; "raw" and "raw_batchnorm" pass the logits
    through unchanged (the batch norm is applied later, over the full
    concatenated decoder input).
    """
    if variant == "softmax":
        return torch.softmax(p_lm, dim=-1)
    if variant == "sigmoid":
        return torch.sigmoid(p_lm)
    if variant == "embedding":
        if embedding is None:
            raise InvalidConfig("embedding injection needs the decoder embedding table")
        return embedding(p_lm.max(dim=-1).indices)
    if variant in ("raw", "raw_batchnorm"):
        return p_lm
    raise InvalidConfig(f"unknown injection {variant!r}")


def candidate_step(context: torch.Tensor, y_prev_emb: torch.Tensor, p_prev_lm: torch.Tensor,
                   s_prev: torch.Tensor, injection: str, decoder: CharDecoder) -> torch.Tensor:
    """Decoder update on [context, prev embedding, injected LM prediction].

    The decoder must have been built with a matching LM input block.
    Gradient flow into the LM is controlled by the caller (detach the LM
    logits to freeze it).
    """
    g = inject_activation(p_prev_lm, injection, decoder.embedding)
    if g.shape[-1] != decoder.lm_input_dim:
        raise DimensionMismatch(
            f"LM block width {g.shape[-1]} != decoder lm_input_dim {decoder.lm_input_dim}")
    x = torch.cat([context, y_prev_emb, g], dim=-1)
    if x.shape[-1] != decoder.input_size:
        raise DimensionMismatch(
            f"concatenated input width {x.shape[-1]} != decoder input size {decoder.input_size}")
    if decoder.input_bn is not None and injection == "raw_batchnorm":
        x = decoder.input_bn(x)
    return decoder.run_cell(x, s_prev)
