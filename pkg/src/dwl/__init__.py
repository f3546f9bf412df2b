"""Joint learning of word embeddings and Wasserstein topic models with a
distilled transport cost."""

__version__ = "0.1.0"

from .corpus import Corpus, Vocabulary, generate_synthetic, load_corpus, save_corpus, split_corpus
from .embedding import (
    EmbeddingModel,
    aggregate_transports,
    cost_matrix,
    distill,
    embedding_gradient_step,
    embedding_objective,
    laplacian,
)
from .ot import exact_ot, gibbs_kernel, normalize_counts, sinkhorn_barycenter, sinkhorn_distance
from .topic import (
    TopicLogits,
    TopicModelState,
    apply_logit_updates,
    reconstruct_document,
    reconstruction_loss,
    sinkhorn_grad,
    softmax_columns,
)
from .trainer import TrainConfig, closest_topic, load_checkpoint, save_checkpoint, train
