"""Training, evaluation, checkpointing and attention export.

Datasets are flat TSV manifests (``image_path<TAB>transcription[<TAB>writer_id]``)
with image paths resolved relative to the manifest file.  Training is
teacher-forced cross entropy with label smoothing, Adam, online
augmentation, per-epoch validation CER/WER and best-checkpoint retention.
The staged recipe (synthetic pre-training, fine-tuning on real data, then
joint training with a pre-trained language model) is three ``train``
invocations sharing checkpoints; enabling candidate fusion on an existing
checkpoint widens the decoder input with zero-initialized LM columns so
the warm start is exact.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image

from .attention import AttentionConfig
from .augment import AugmentConfig, apply_pipeline, derive_seed
from .decoder import DecoderConfig, smoothed_cross_entropy
from .encoder import EncoderConfig
from .errors import (DivergenceDetected, InvalidConfig, MalformedRow,
                     MissingImage, VocabularyMismatch)
from .langmodel import FusionConfig, LMConfig
from .lexicon import Lexicon, constrain
from .metrics import MetricsReport, build_report
from .model import Recognizer, load_compatible_state
from .vocab import Vocabulary, build_vocabulary, decode, encode

log = logging.getLogger(__name__)

SEED_ENV_VAR = "ATTNHTR_SEED"


# ----------------------------------------------------------------------
# manifests

@dataclass
class WordSample:
    image_path: Path
    transcription: str
    writer_id: Optional[str] = None

    def load_image(self, height: int) -> np.ndarray:
        """Grayscale float image in [0, 1], resized to ``height`` keeping aspect."""
        with Image.open(self.image_path) as im:
            im = im.convert("L")
            w, h = im.size
            new_w = max(int(round(w * height / h)), 1)
            im = im.resize((new_w, height), Image.BILINEAR)
            return np.asarray(im, dtype=np.float64) / 255.0


def load_manifest(path: Union[str, Path]) -> List[WordSample]:
    """Parse a manifest; rows keep file order, duplicates included."""
    path = Path(path)
    base = path.parent
    samples: List[WordSample] = []
    with open(path, encoding="utf-8") as fh:
        for row, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3) or not fields[1]:
                raise MalformedRow(f"{path}:{row}: expected image<TAB>text[<TAB>writer], got {line!r}")
            image_path = Path(fields[0])
            if not image_path.is_absolute():
                image_path = base / image_path
            if not image_path.exists():
                raise MissingImage(str(image_path), row)
            samples.append(WordSample(image_path, fields[1], fields[2] if len(fields) == 3 else None))
    return samples


# ----------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 32
    epochs: int = 100
    dropout: float = 0.5
    label_smoothing: float = 0.1
    augment_probability: float = 0.5
    seed: Optional[int] = None          # None -> $ATTNHTR_SEED -> 0
    patience: int = 20
    checkpoint_dir: Optional[str] = None
    extra_chars: str = ""
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def resolved(self) -> "TrainConfig":
        """Copy with the seed pinned and shared knobs pushed into sub-configs."""
        cfg = copy.deepcopy(self)
        if cfg.seed is None:
            cfg.seed = int(os.environ.get(SEED_ENV_VAR, "0"))
        cfg.encoder.dropout = cfg.dropout
        cfg.decoder.dropout = cfg.dropout
        cfg.decoder.label_smoothing = cfg.label_smoothing
        cfg.augment.apply_probability = cfg.augment_probability
        return cfg

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["augment"] = self.augment.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        sub = {
            "encoder": EncoderConfig, "attention": AttentionConfig,
            "decoder": DecoderConfig, "fusion": FusionConfig,
        }
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in payload:
                continue
            value = payload[name]
            if name == "augment":
                kwargs[name] = AugmentConfig.from_dict(value)
            elif name == "fusion":
                value = dict(value)
                lm = value.pop("lm", None)
                fusion = FusionConfig(**value)
                if lm is not None:
                    fusion.lm = LMConfig(**lm)
                kwargs[name] = fusion
            elif name in sub:
                kwargs[name] = sub[name](**value)
            else:
                kwargs[name] = value
        return cls(**kwargs)


def apply_overrides(payload: dict, overrides: dict) -> dict:
    """Apply {"a.b.c": value} dotted-key overrides onto a nested config dict."""
    out = copy.deepcopy(payload)
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


# ----------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: Optional[dict]
    vocabulary: Vocabulary
    config: TrainConfig
    epoch: int
    best_cer: float

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "model": self.model_state,
            "optimizer": self.optimizer_state,
            "vocab": self.vocabulary.to_json_dict(),
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "best_cer": self.best_cer,
        }, path)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        return cls(
            model_state=payload["model"],
            optimizer_state=payload.get("optimizer"),
            vocabulary=Vocabulary.from_json_dict(payload["vocab"]),
            config=TrainConfig.from_dict(payload["config"]),
            epoch=int(payload["epoch"]),
            best_cer=float(payload["best_cer"]),
        )

    def build_model(self) -> Recognizer:
        cfg = self.config
        model = Recognizer(self.vocabulary, cfg.encoder, cfg.attention, cfg.decoder, cfg.fusion)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


# ----------------------------------------------------------------------
# batching

def collate_images(images: Sequence[np.ndarray], min_width: int,
                   dtype=torch.float32) -> Tuple[torch.Tensor, List[int]]:
    """Right-pad to the batch max width with background 1.0."""
    widths = [max(img.shape[1], min_width) for img in images]
    wmax = max(widths)
    h = images[0].shape[0]
    batch = torch.ones(len(images), 1, h, wmax, dtype=dtype)
    for i, img in enumerate(images):
        batch[i, 0, :, :img.shape[1]] = torch.as_tensor(img, dtype=dtype)
    return batch, widths


def encode_batch(texts: Sequence[str], vocabulary: Vocabulary
                 ) -> Tuple[torch.Tensor, torch.Tensor]:
    """(decoder_inputs, targets), right-padded with PAD.

    targets are char indices terminated by END; inputs are the same
    sequence shifted right with GO in front (pure teacher forcing).
    """
    seqs = [encode(t, vocabulary) for t in texts]
    t_max = max(len(s) for s in seqs)
    pad = vocabulary.pad_index
    targets = torch.full((len(seqs), t_max), pad, dtype=torch.long)
    inputs = torch.full((len(seqs), t_max), pad, dtype=torch.long)
    for i, seq in enumerate(seqs):
        targets[i, :len(seq)] = torch.tensor(seq)
        inputs[i, 0] = vocabulary.go_index
        inputs[i, 1:len(seq)] = torch.tensor(seq[:-1])
    return inputs, targets


def teacher_forcing_loss(model: Recognizer, images: torch.Tensor, widths: Sequence[int],
                         texts: Sequence[str], label_smoothing: float) -> torch.Tensor:
    inputs, targets = encode_batch(texts, model.vocabulary)
    logits = model.forward_teacher(images, widths, inputs)
    return smoothed_cross_entropy(logits, targets, label_smoothing,
                                  ignore_index=model.vocabulary.pad_index)


# ----------------------------------------------------------------------
# training

def _check_coverage(samples: Sequence[WordSample], vocabulary: Vocabulary) -> None:
    for s in samples:
        for ch in s.transcription:
            if ch not in vocabulary:
                raise VocabularyMismatch(
                    f"transcription {s.transcription!r} has character {ch!r} "
                    f"outside the vocabulary")


def _decode_samples(model: Recognizer, images: List[np.ndarray], batch_size: int,
                    min_width: int, max_steps: Optional[int] = None) -> List[str]:
    hyps: List[str] = []
    model.eval()
    with torch.no_grad():
        for b in range(0, len(images), batch_size):
            chunk = images[b:b + batch_size]
            batch, widths = collate_images(chunk, min_width)
            for result in model.transcribe(batch, widths, max_steps=max_steps):
                hyps.append(decode(result.tokens, model.vocabulary))
    return hyps


def train(cfg: TrainConfig, train_manifest: Union[str, Path],
          valid_manifest: Union[str, Path],
          init: Optional[Checkpoint] = None) -> Checkpoint:
    """Train a recognizer; returns (and optionally saves) the best-CER checkpoint."""
    cfg = cfg.resolved()
    train_samples = load_manifest(train_manifest)
    valid_samples = load_manifest(valid_manifest)

    if init is not None:
        vocabulary = init.vocabulary
    else:
        vocabulary = build_vocabulary([s.transcription for s in train_samples], cfg.extra_chars)
    _check_coverage(train_samples, vocabulary)

    if cfg.decoder.max_steps is None:
        cfg.decoder.max_steps = 2 + max(len(s.transcription) for s in train_samples)

    torch.manual_seed(cfg.seed)
    model = Recognizer(vocabulary, cfg.encoder, cfg.attention, cfg.decoder, cfg.fusion)
    if init is not None:
        report = load_compatible_state(model, init.model_state)
        if report["expanded"] or report["new"]:
            log.info("checkpoint surgery: %d expanded, %d new tensors",
                     len(report["expanded"]), len(report["new"]))
    if cfg.fusion.mode in ("shallow", "deep", "candidate") and cfg.fusion.lm_checkpoint:
        lm_payload = torch.load(cfg.fusion.lm_checkpoint, map_location="cpu", weights_only=True)
        if lm_payload["vocab"]["chars"] != list(vocabulary.chars):
            raise VocabularyMismatch("language model vocabulary differs from the recognizer's")
        model.lm.load_state_dict(lm_payload["model"])
        model._apply_lm_freezing()

    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad), lr=cfg.learning_rate)
    if init is not None and init.optimizer_state is not None:
        try:
            optimizer.load_state_dict(init.optimizer_state)
        except ValueError:
            log.info("optimizer state incompatible with the new architecture; starting fresh")

    height = cfg.encoder.input_height
    stride = cfg.encoder.horizontal_stride
    train_images = [s.load_image(height) for s in train_samples]
    valid_images = [s.load_image(height) for s in valid_samples]
    valid_refs = [s.transcription for s in valid_samples]

    rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    drop_singletons = model.decoder.input_bn is not None
    best = {"cer": float("inf"), "state": None, "epoch": -1}
    stale = 0

    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_samples))
        total_loss, batches = 0.0, 0
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            if drop_singletons and len(idx) == 1:
                continue  # batch norm needs >1 sample in training mode
            imgs = []
            for i in idx:
                img = train_images[int(i)]
                if cfg.augment.apply_probability > 0:
                    img = apply_pipeline(img, cfg.augment, derive_seed(cfg.seed, epoch, int(i)))
                imgs.append(img)
            batch, widths = collate_images(imgs, stride)
            texts = [train_samples[int(i)].transcription for i in idx]
            loss = teacher_forcing_loss(model, batch, widths, texts, cfg.label_smoothing)
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            batches += 1

        hyps = _decode_samples(model, valid_images, cfg.batch_size, stride)
        report = build_report([(str(s.image_path), r, h)
                               for s, r, h in zip(valid_samples, valid_refs, hyps)])
        log.info("epoch %d: loss %.4f, valid CER %.2f, WER %.2f",
                 epoch, total_loss / max(batches, 1), report.aggregate_cer, report.aggregate_wer)

        if report.aggregate_cer < best["cer"]:
            best.update(cer=report.aggregate_cer, epoch=epoch,
                        state=copy.deepcopy(model.state_dict()))
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                log.info("early stop at epoch %d (no CER improvement for %d epochs)",
                         epoch, cfg.patience)
                break

    if best["state"] is None:
        best.update(state=copy.deepcopy(model.state_dict()), epoch=0)
    ckpt = Checkpoint(
        model_state=best["state"], optimizer_state=optimizer.state_dict(),
        vocabulary=vocabulary, config=cfg, epoch=best["epoch"], best_cer=best["cer"])
    if cfg.checkpoint_dir:
        ckpt.save(Path(cfg.checkpoint_dir) / "best.pt")
    return ckpt


# ----------------------------------------------------------------------
# evaluation and attention export

def evaluate(ckpt: Checkpoint, manifest: Union[str, Path],
             lexicon: Optional[Lexicon] = None) -> MetricsReport:
    """Greedy-decode every manifest row and score micro-averaged CER/WER.

    When a lexicon is given each hypothesis is snapped to its nearest
    lexicon word before scoring.
    """
    samples = load_manifest(manifest)
    model = ckpt.build_model()
    cfg = ckpt.config
    height = cfg.encoder.input_height
    images = [s.load_image(height) for s in samples]
    max_steps = cfg.decoder.max_steps or (2 + max(len(s.transcription) for s in samples))
    hyps = _decode_samples(model, images, cfg.batch_size, cfg.encoder.horizontal_stride,
                           max_steps=max_steps)
    if lexicon is not None:
        hyps = [constrain(h, lexicon) for h in hyps]
    rel_ids = [str(s.image_path.name) for s in samples]
    return build_report(list(zip(rel_ids, [s.transcription for s in samples], hyps)))


def export_attention(ckpt: Checkpoint, manifest: Union[str, Path],
                     out_dir: Union[str, Path]) -> List[Path]:
    """Write per-step attention masks as CSV grids plus overlay images.

    For a decode of L steps the CSV has L rows (one mask per step); each
    step also gets an overlay PNG of the upsampled mask on the input.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_manifest(manifest)
    model = ckpt.build_model()
    cfg = ckpt.config
    height = cfg.encoder.input_height
    stride = cfg.encoder.horizontal_stride
    max_steps = cfg.decoder.max_steps or (2 + max(len(s.transcription) for s in samples))

    written: List[Path] = []
    for i, sample in enumerate(samples):
        img = sample.load_image(height)
        batch, widths = collate_images([img], stride)
        result = model.transcribe(batch, widths, max_steps=max_steps)[0]
        masks = result.masks.numpy()

        grid_path = out_dir / f"{i:04d}_attention.csv"
        np.savetxt(grid_path, masks, delimiter=",")
        written.append(grid_path)

        w = img.shape[1]
        n = masks.shape[1]
        centers = (np.arange(n) + 0.5) * (w / n)
        for t in range(masks.shape[0]):
            heat = np.interp(np.arange(w), centers, masks[t])
            heat = heat / heat.max() if heat.max() > 0 else heat
            overlay = np.clip(img * (1.0 - 0.6 * heat[None, :]), 0.0, 1.0)
            png_path = out_dir / f"{i:04d}_step{t:02d}.png"
            Image.fromarray(np.round(overlay * 255).astype(np.uint8)).save(png_path)
            written.append(png_path)
    return written


def write_report(report: MetricsReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    return path


def vocab_from_manifest(path: Union[str, Path], extra_chars: str = "") -> Vocabulary:
    samples = load_manifest(path)
    return build_vocabulary([s.transcription for s in samples], extra_chars)
