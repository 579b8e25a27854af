"""srnlab: a desk-scale session-based recommendation laboratory.

GRU next-item models over trainable item embeddings, prefix augmentation
with privileged future sequences, temporal fine-tuning, teacher-student
distillation, a direct embedding-prediction head, and the Recall@20 /
MRR@20 replay evaluation protocol.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ClickEvent,
    MiniBatch,
    Session,
    TrainingExample,
    Vocabulary,
    augment_corpus,
    augment_prefixes,
    make_batches,
    pad_truncate,
    parse_clicks,
    split_and_filter,
    synth_generate,
    temporal_fraction,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    SrnLabError,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    bench_prediction,
    evaluate,
    itemknn_rank,
    rank_topk_embedding,
    rank_topk_softmax,
    spop_rank,
)
from .model import ModelConfig, ModelParams, count_params, init_params
from .tensor import AdamConfig, Parameter, adam_step, finite_difference_check, matmul, softmax_rows
from .training import (
    DistillConfig,
    TrainConfig,
    TrainReport,
    cosine_loss,
    cross_entropy_loss,
    distillation_loss,
    finetune_m2,
    onehot,
    train_m1,
    train_m3,
    train_m4,
)

__version__ = "0.1.0"
