"""interdoc: retrieval over documents interleaved with text, images, and tables.

Documents are embedded as the mean of their section embeddings and searched
by exact cosine similarity; a binary pair classifier reranks sections of the
retrieved documents.
"""

from .corpus import (
    Corpus,
    DocFormat,
    Document,
    QRel,
    Query,
    Section,
    Segment,
    apply_format,
    validate_document,
    validate_query,
)
from .encoding import (
    Embedding,
    EncoderBackend,
    EncoderParams,
    FeatureVector,
    HashEncoderBackend,
    TokenStream,
    encode,
    hash_features,
    init_encoder_params,
    tokenize_query,
    tokenize_section,
)
from .index import Index, build_index, embed_document, load_index, save_index, search
from .ingest import (
    ingest_directory,
    linearize_table,
    parse_html,
    read_corpus,
    read_qrels,
    read_queries,
    validate_qrels,
    write_corpus,
    write_qrels,
    write_queries,
)
from .metrics import EvalReport, build_report, mrr_at_k, recall_at_k
from .rerank import (
    RerankerParams,
    classify_gold_doc,
    init_reranker_params,
    pair_features,
    rerank_sections,
    score_pair,
)
from .remote import RemoteEncoderBackend, conformance_check, remote_embed, remote_score
from .synthetic import SynthConfig, gen_synthetic, split_queries
from .training import (
    Hyperparams,
    RerankExample,
    bce_reranker_loss,
    contrastive_loss,
    finite_diff_check,
    load_reranker_checkpoint,
    load_retriever_checkpoint,
    sample_negatives,
    save_reranker_checkpoint,
    save_retriever_checkpoint,
    train_reranker,
    train_retriever,
)

__version__ = "0.1.0"
