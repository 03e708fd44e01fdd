"""Compositional sentiment models: matrix-space models, Elman RNNs and
multiplicative (tensor) RNNs with ordinal and classification heads."""

from .corpus import (
    Corpus,
    EmbeddingTable,
    LabeledSequence,
    Vocabulary,
    generate_synthetic_corpus,
    init_random_embeddings,
    load_corpus_tsv,
    load_embeddings_text,
)
from .models import (
    ElmanParams,
    HeadKind,
    MatrixSpaceParams,
    MRnnParams,
    forward_elman,
    forward_matrix_space,
    forward_mrnn,
    mrnn_from_elman,
    mrnn_from_matrix_space,
    predict,
)
from .numerics import Activation, Tensor3
from .training import TrainConfig, TrainReport, grad_check, train

__version__ = "0.1.0"
