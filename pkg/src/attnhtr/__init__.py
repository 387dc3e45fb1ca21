"""Attention-based seq2seq handwritten word recognition with character-LM fusion."""

from .attention import AttentionConfig, AttentionParams, attend, score_content, score_location
from .augment import AugmentConfig, apply_pipeline, elastic_transform, affine_transform, photometric_transform
from .decoder import CharDecoder, DecoderConfig, decode_greedy, smoothed_cross_entropy
from .encoder import EncoderConfig, ImageEncoder, positional_encode
from .langmodel import (CharLM, DeepFusionHead, FusionConfig, LMConfig, candidate_step,
                        fuse_deep, fuse_shallow, inject_activation, lm_pretrain, lm_step)
from .lexicon import Lexicon, constrain
from .metrics import EditCounts, MetricsReport, build_report, cer, edit_counts, levenshtein, wer
from .model import Recognizer, load_compatible_state
from .pipeline import (Checkpoint, TrainConfig, WordSample, evaluate, export_attention,
                       load_manifest, train)
from .synthgen import CorpusLexicon, FontSet, extract_lexicon, generate_dataset, render_word
from .vocab import Vocabulary, build_vocabulary, decode, encode

__version__ = "0.1.0"
