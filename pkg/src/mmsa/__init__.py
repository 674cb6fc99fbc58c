"""Multimodal sentiment analysis with symmetric cross-attention fusion.

A from-scratch trainable stack on top of numpy: sequence encoders, mirrored
cross-modal attention fusion, a prediction head with analytic gradients
throughout, the Adam training loop, an MFCC audio front end, the evaluation
metric suite, and deterministic text formats for features, labels, and
checkpoints.
"""

import os as _os

# MMSA_THREADS caps internal (BLAS) parallelism; must land in the
# environment before numpy loads its backend.
_cap = _os.environ.get("MMSA_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .audio import (MfccConfig, PcmAudio, dct_matrix, fft_magnitude, frame_and_window,
                    hz_to_mel, load_wav, mel_filterbank, mel_to_hz, mfcc, normalize_peak,
                    parse_wav, radix2_fft)
from .data import (FeatureSequence, SampleRecord, load_feature_file, load_labels,
                   prepare_samples, resample_to_length, synth_dataset, synth_signatures,
                   write_feature_file, write_labels)
from .errors import ConfigError, DataError, NumericError
from .fusion import FusionBranch, FusionOutput, FusionStack, SymmetricFusionBlock
from .gradcheck import grad_check, standard_checks
from .layers import (AttentionPool, BiLstm, FeedForward, LayerNorm, Linear, MeanPool,
                     MultiHeadAttention, Param, PointwiseConv1d, add_positional, glorot,
                     positional_table)
from .metrics import MetricReport, acc_k, f1_weighted, mae, pearson_corr
from .model import (BranchOutputs, ModelConfig, Prediction, SentimentModel, compute_loss,
                    predict)
from .ops import Rng, matmul, rand_normal, rand_uniform, relu, row_stats, softmax_rows
from .optim import Adam, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
