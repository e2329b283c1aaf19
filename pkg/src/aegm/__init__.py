"""Unsupervised anomalous-sound detection: a shared-encoder autoencoder
with per-section decoders and an auxiliary section classifier, from WAV
ingestion through AUC/pAUC reporting."""

from ._kernels import BACKEND as kernel_backend
from .audio import AudioClip, load_wav, write_wav_pcm16
from .data import ClipMeta, SynthSpec, read_manifest, scan_dcase, synth_generate
from .features import (FeatureConfig, FeatureMatrix, extract, load_features,
                       log_mel, save_features, shuffle_low_freq, stack_context,
                       stft_magnitude)
from .metrics import EvalReport, auc, build_report, pauc
from .model import (AegmConfig, AegmModel, GroupedBatch, LossBreakdown,
                    adaptive_weights, combine_total, load_checkpoint,
                    save_checkpoint)
from .scoring import ScoreRecord, ensemble, mv_normalize, score_aux, score_rec
from .training import AugmentConfig, TrainConfig, make_batches, train

__version__ = "0.1.0"
