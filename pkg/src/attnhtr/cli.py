"""Command line interface: synthgen, lm-pretrain, train, evaluate, export-attention.

Configs are hierarchical YAML files; any field can be overridden on the
command line with ``--dotted.key value`` (values parsed as YAML).  When no
seed is configured the ``ATTNHTR_SEED`` environment variable is used.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch
import yaml

from . import pipeline, synthgen
from .augment import AugmentConfig
from .langmodel import LMConfig, lm_pretrain
from .lexicon import Lexicon
from .pipeline import Checkpoint, TrainConfig, apply_overrides
from .vocab import Vocabulary

log = logging.getLogger(__name__)


def _env_seed(value):
    if value is not None:
        return value
    return int(os.environ.get(pipeline.SEED_ENV_VAR, "0"))


def _load_vocabulary(path: str) -> Vocabulary:
    """Accept a vocab JSON, a recognizer/LM checkpoint, or a manifest TSV."""
    p = Path(path)
    if p.suffix == ".json":
        return Vocabulary.from_json_dict(json.loads(p.read_text(encoding="utf-8")))
    if p.suffix in (".tsv", ".txt"):
        return pipeline.vocab_from_manifest(p)
    payload = torch.load(p, map_location="cpu", weights_only=True)
    return Vocabulary.from_json_dict(payload["vocab"])


def _read_corpus(paths) -> str:
    return "\n".join(Path(p).read_text(encoding="utf-8") for p in paths)


def _parse_pairs(extra) -> dict:
    if len(extra) % 2 != 0:
        raise SystemExit(f"override arguments must come in --key value pairs, got {extra!r}")
    overrides = {}
    for i in range(0, len(extra), 2):
        key = extra[i]
        if not key.startswith("--"):
            raise SystemExit(f"expected an override flag, got {key!r}")
        overrides[key[2:]] = yaml.safe_load(extra[i + 1])
    return overrides


def cmd_synthgen(args) -> int:
    lex = synthgen.extract_lexicon(_read_corpus(args.corpus), source=",".join(args.corpus))
    fonts = synthgen.FontSet.from_dir(args.fonts)
    aug = None if args.no_augment else AugmentConfig()
    manifest = synthgen.generate_dataset(lex, fonts, args.n, aug, _env_seed(args.seed),
                                         args.out, target_height=args.height)
    print(manifest)
    return 0


def cmd_lm_pretrain(args) -> int:
    vocabulary = _load_vocabulary(args.vocab)
    cfg = LMConfig(embedding_dim=args.embedding_dim, state_dim=args.state_dim,
                   layers=args.layers)
    result = lm_pretrain(_read_corpus(args.corpus), vocabulary, cfg,
                         epochs=args.epochs, window=args.window,
                         batch_size=args.batch_size, learning_rate=args.lr,
                         seed=_env_seed(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "model": result.model.state_dict(),
        "vocab": vocabulary.to_json_dict(),
        "config": {"embedding_dim": cfg.embedding_dim, "state_dim": cfg.state_dim,
                   "layers": cfg.layers, "dropout": cfg.dropout},
        "perplexity": result.perplexity,
    }, out)
    print(f"final training perplexity: {result.perplexity:.3f}")
    print(out)
    return 0


def cmd_train(args, extra) -> int:
    payload = {}
    if args.config:
        payload = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    payload = apply_overrides(payload, _parse_pairs(extra))
    cfg = TrainConfig.from_dict(payload)
    init = Checkpoint.load(args.init) if args.init else None
    ckpt = pipeline.train(cfg, args.train, args.valid, init=init)
    if args.save:
        ckpt.save(args.save)
        print(args.save)
    print(f"best validation CER: {ckpt.best_cer:.2f} (epoch {ckpt.epoch})")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    lex = Lexicon.from_file(args.lexicon) if args.lexicon else None
    report = pipeline.evaluate(ckpt, args.manifest, lexicon=lex)
    if args.out:
        pipeline.write_report(report, args.out)
        print(args.out)
    else:
        print(report.to_json())
    return 0


def cmd_export_attention(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    written = pipeline.export_attention(ckpt, args.manifest, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnhtr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthgen", help="render synthetic word images from fonts")
    p.add_argument("--corpus", nargs="+", required=True, help="text files to build the lexicon from")
    p.add_argument("--fonts", required=True, help="directory of .ttf/.otf fonts")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--no-augment", action="store_true")

    p = sub.add_parser("lm-pretrain", help="pre-train the character language model")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--vocab", required=True, help="vocab JSON, checkpoint, or manifest TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--window", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--state-dim", type=int, default=256)
    p.add_argument("--embedding-dim", type=int, default=128)

    p = sub.add_parser("train", help="train a recognizer")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--valid", required=True, help="validation manifest")
    p.add_argument("--init", default=None, help="checkpoint to start from")
    p.add_argument("--save", default=None, help="where to save the best checkpoint")

    p = sub.add_parser("evaluate", help="greedy-decode a manifest and report CER/WER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lexicon", default=None, help="one word per line, UTF-8")
    p.add_argument("--out", default=None, help="write the JSON report here")

    p = sub.add_parser("export-attention", help="dump attention grids and overlays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "train":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "synthgen":
        return cmd_synthgen(args)
    if args.command == "lm-pretrain":
        return cmd_lm_pretrain(args)
    if args.command == "train":
        return cmd_train(args, extra)
    if args.command == "evaluate":
        return cmd_evaluate(args)
    if args.command == "export-attention":
        return cmd_export_attention(args)
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
