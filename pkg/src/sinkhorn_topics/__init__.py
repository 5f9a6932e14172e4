"""Neural topic model trained with Sinkhorn distances between documents'
word distributions and their topic proportions, under a cost matrix of
cosine distances between word and topic embeddings."""

from .artifact import ArtifactError, load_model, read_matrix, save_model, write_matrix
from .corpus import (
    BowCorpus, CorpusFormatError, Vocabulary, ingest_text, load_bow, load_corpus, load_vocab,
    normalize_batch, save_corpus, split,
)
from .embeddings import (
    EmbeddingFormatError, TopicEmbeddings, WordEmbeddings, cosine, cosine_matrix, cost_matrix,
    init_topic_embeddings, load_word_vectors,
)
from .evaluation import (
    cluster_scores, coherence_curve, diversity, diversity_curve, kmeans, nmi, npmi_pair, npmi_topic,
    purity, top_topic_assign, topic_npmi_scores,
)
from .model import TopicModel, TrainConfig, infer, joint_loss, top_words, train, virtual_decoder
from .ot import (
    NumericalError, SinkhornConfig, TransportPlan, exact_ot, sinkhorn_backward, sinkhorn_batch,
    sinkhorn_log_domain, transport_plan_from_state,
)

__version__ = "0.1.0"
