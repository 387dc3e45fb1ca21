"""Full recognizer: encoder + attention + decoder (+ optional language model).

The teacher-forced pass feeds ground-truth previous characters to the
recognizer branch while the language model, when fused, consumes the
recognizer's own previous predictions, so joint training lets the LM see
and adapt to the recognizer's mistakes.  Greedy decoding starts from GO
and stops per sample at END or the step cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from .attention import AttentionConfig, AttentionParams, attend, score_content, score_location
from .decoder import CharDecoder, DecoderConfig
from .encoder import EncoderConfig, ImageEncoder
from .errors import InvalidConfig
from .langmodel import (CharLM, DeepFusionHead, FusionConfig, candidate_step,
                        fuse_deep, fuse_shallow, lm_step)
from .vocab import Vocabulary


@dataclass
class DecodeResult:
    tokens: List[int]            # emitted indices, END included when it fired
    masks: torch.Tensor          # (steps, N_valid) attention masks


class Recognizer(nn.Module):
    def __init__(self, vocabulary: Vocabulary, enc_cfg: EncoderConfig,
                 att_cfg: AttentionConfig, dec_cfg: DecoderConfig,
                 fusion_cfg: Optional[FusionConfig] = None):
        super().__init__()
        att_cfg.validate()
        fusion_cfg = fusion_cfg or FusionConfig()
        fusion_cfg.validate()
        self.vocabulary = vocabulary
        self.att_cfg = att_cfg
        self.fusion_cfg = fusion_cfg

        self.encoder = ImageEncoder(enc_cfg)
        self.attention = AttentionParams(
            feature_dim=enc_cfg.feature_dim, state_dim=dec_cfg.state_dim,
            attn_dim=att_cfg.attn_dim, kernel_size=att_cfg.location_kernel_size,
            channels=att_cfg.location_channels)

        lm_input_dim = 0
        if fusion_cfg.mode == "candidate":
            lm_input_dim = (dec_cfg.embedding_dim if fusion_cfg.injection == "embedding"
                            else vocabulary.size)
        self.decoder = CharDecoder(
            vocabulary.size, enc_cfg.feature_dim, dec_cfg,
            lm_input_dim=lm_input_dim,
            input_batchnorm=(fusion_cfg.mode == "candidate"
                             and fusion_cfg.injection == "raw_batchnorm"))

        self.lm: Optional[CharLM] = None
        self.deep_head: Optional[DeepFusionHead] = None
        if fusion_cfg.mode in ("shallow", "deep", "candidate"):
            self.lm = CharLM(vocabulary.size, fusion_cfg.lm)
        if fusion_cfg.mode == "deep":
            self.deep_head = DeepFusionHead(
                dec_cfg.state_dim, fusion_cfg.lm.state_dim, enc_cfg.feature_dim,
                fusion_cfg.deep_hidden, vocabulary.size)
        self._apply_lm_freezing()

    def _apply_lm_freezing(self) -> None:
        # Shallow fusion never trains the LM; deep fusion keeps it frozen
        # (only the head adapts); candidate fusion honors lm_trainable.
        if self.lm is None:
            return
        trainable = self.fusion_cfg.mode == "candidate" and self.fusion_cfg.lm_trainable
        for p in self.lm.parameters():
            p.requires_grad_(trainable)

    # ------------------------------------------------------------------
    # shared step machinery

    def _initial_alpha(self, batch: int, n: int, mask: Optional[torch.Tensor],
                       dtype, device) -> torch.Tensor:
        if mask is None:
            return torch.full((batch, n), 1.0 / n, dtype=dtype, device=device)
        counts = mask.sum(dim=1, keepdim=True).clamp(min=1)
        return mask.to(dtype) / counts.to(dtype)

    def _score(self, H, s, alpha, mask):
        if self.att_cfg.variant == "location":
            e = score_location(H, s, alpha, self.attention)
        else:
            e = score_content(H, s, self.attention)
        return attend(e, H, mask)

    def _valid_mask(self, lengths: Optional[torch.Tensor], batch: int, n: int,
                    device) -> Optional[torch.Tensor]:
        if lengths is None:
            return None
        idx = torch.arange(n, device=device).unsqueeze(0)
        return idx < lengths.unsqueeze(1).to(device)

    # ------------------------------------------------------------------
    # training pass

    def forward_teacher(self, images: torch.Tensor, widths: Sequence[int],
                        decoder_inputs: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits (B, T, vocab) for inputs [GO, y_1 .. y_{T-1}]."""
        H, lengths = self.encoder(images, widths)
        return self.logits_from_features(H, lengths, decoder_inputs)

    def logits_from_features(self, H: torch.Tensor, lengths: Optional[torch.Tensor],
                             decoder_inputs: torch.Tensor) -> torch.Tensor:
        fusion = self.fusion_cfg
        b, n, _ = H.shape
        t_max = decoder_inputs.shape[1]
        mask = self._valid_mask(lengths, b, n, H.device)
        s = self.decoder.initial_state(b, dtype=H.dtype, device=H.device)
        alpha = self._initial_alpha(b, n, mask, H.dtype, H.device)
        lm_state = None
        y_prev_pred = torch.full((b,), self.vocabulary.go_index, dtype=torch.long,
                                 device=H.device)
        if self.lm is not None:
            lm_state = self.lm.initial_state(b, dtype=H.dtype, device=H.device)

        step_logits = []
        for t in range(t_max):
            alpha, context = self._score(H, s, alpha, mask)
            emb = self.decoder.embed_token(decoder_inputs[:, t])
            if fusion.mode == "candidate":
                lm_out, lm_state = lm_step(y_prev_pred, lm_state, self.lm)
                p_lm = lm_out.logits
                if not fusion.lm_trainable:
                    p_lm = p_lm.detach()
                s = candidate_step(context, emb, p_lm, s, fusion.injection, self.decoder)
                logits, _ = self.decoder.predict(s, context)
            elif fusion.mode == "deep":
                _, lm_state = lm_step(y_prev_pred, lm_state, self.lm)
                s = self.decoder.step(context, emb, s)
                logits = fuse_deep(s, lm_state, context, self.deep_head)
            else:
                s = self.decoder.step(context, emb, s)
                logits, _ = self.decoder.predict(s, context)
            y_prev_pred = logits.detach().max(dim=-1).indices
            step_logits.append(logits)
        return torch.stack(step_logits, dim=1)

    # ------------------------------------------------------------------
    # greedy decoding

    @torch.no_grad()
    def greedy_from_features(self, H: torch.Tensor, lengths: Optional[torch.Tensor] = None,
                             fusion: Optional[FusionConfig] = None,
                             max_steps: Optional[int] = None) -> List[DecodeResult]:
        fusion = fusion or self.fusion_cfg
        if fusion.mode != self.fusion_cfg.mode and {fusion.mode, self.fusion_cfg.mode} - {"none", "shallow"}:
            raise InvalidConfig(
                f"model was built for fusion mode {self.fusion_cfg.mode!r}; "
                f"cannot decode with {fusion.mode!r}")
        t_cap = max_steps or self.decoder.cfg.max_steps
        if t_cap is None:
            raise InvalidConfig("no decoding step cap: set DecoderConfig.max_steps or pass max_steps")

        b, n, _ = H.shape
        end = self.vocabulary.end_index
        mask = self._valid_mask(lengths, b, n, H.device)
        s = self.decoder.initial_state(b, dtype=H.dtype, device=H.device)
        alpha = self._initial_alpha(b, n, mask, H.dtype, H.device)
        lm_state = self.lm.initial_state(b, dtype=H.dtype, device=H.device) if self.lm is not None else None
        y_prev = torch.full((b,), self.vocabulary.go_index, dtype=torch.long, device=H.device)

        tokens: List[List[int]] = [[] for _ in range(b)]
        masks: List[List[torch.Tensor]] = [[] for _ in range(b)]
        finished = torch.zeros(b, dtype=torch.bool, device=H.device)

        for _ in range(t_cap):
            alpha, context = self._score(H, s, alpha, mask)
            emb = self.decoder.embed_token(y_prev)
            lm_logits = None
            if fusion.mode in ("shallow", "deep", "candidate") and self.lm is not None:
                lm_out, lm_state = lm_step(y_prev, lm_state, self.lm)
                lm_logits = lm_out.logits
            if fusion.mode == "candidate":
                s = candidate_step(context, emb, lm_logits, s, fusion.injection, self.decoder)
                logits, y = self.decoder.predict(s, context)
            elif fusion.mode == "deep":
                s = self.decoder.step(context, emb, s)
                logits = fuse_deep(s, lm_state, context, self.deep_head)
                y = logits.max(dim=-1).indices
            else:
                s = self.decoder.step(context, emb, s)
                logits, y = self.decoder.predict(s, context)
            if fusion.mode == "shallow" and lm_logits is not None:
                y = fuse_shallow(logits, lm_logits, fusion.shallow_weight)

            for i in range(b):
                if not finished[i]:
                    tokens[i].append(int(y[i]))
                    masks[i].append(alpha[i].clone())
            finished |= y == end
            y_prev = y
            if bool(finished.all()):
                break

        results = []
        for i in range(b):
            n_valid = int(lengths[i]) if lengths is not None else n
            stack = torch.stack(masks[i])[:, :n_valid] if masks[i] else torch.zeros(0, n_valid)
            results.append(DecodeResult(tokens=tokens[i], masks=stack))
        return results

    @torch.no_grad()
    def transcribe(self, images: torch.Tensor, widths: Sequence[int],
                   fusion: Optional[FusionConfig] = None,
                   max_steps: Optional[int] = None) -> List[DecodeResult]:
        H, lengths = self.encoder(images, widths)
        return self.greedy_from_features(H, lengths, fusion=fusion, max_steps=max_steps)


def load_compatible_state(model: Recognizer, old_state: dict) -> dict:
    """Load a checkpoint into a possibly wider model (fusion enabled later).

    Matching tensors are copied as-is.  The first decoder GRU layer's
    input weights may gain columns when an LM input block is added; the
    old columns are copied and the new ones zero-initialized, so the
    widened model starts out exactly equivalent to the old one.  Returns
    {"copied": [...], "expanded": [...], "new": [...]}.
    """
    report = {"copied": [], "expanded": [], "new": []}
    state = model.state_dict()
    for key, tensor in state.items():
        old = old_state.get(key)
        if old is None:
            report["new"].append(key)
            continue
        if old.shape == tensor.shape:
            state[key] = old
            report["copied"].append(key)
        elif key.endswith("gru.weight_ih_l0") and old.dim() == 2 and \
                old.shape[0] == tensor.shape[0] and old.shape[1] < tensor.shape[1]:
            widened = torch.zeros_like(tensor)
            widened[:, :old.shape[1]] = old
            state[key] = widened
            report["expanded"].append(key)
        else:
            report["new"].append(key)
    model.load_state_dict(state)
    return report
