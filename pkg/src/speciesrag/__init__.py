"""Retrieval-augmented open-vocabulary species recognition.

A query image (as pre-computed encoder embeddings) is matched against
chunked species descriptions by an ensemble of cross-modal encoders, the
top candidates are re-ranked by visual similarity to per-species anchor
images, and the surviving species summaries are handed to a generation
provider whose free-text answer is resolved back to a canonical species.
"""

from .benchmark import (
    AblationResult,
    BenchmarkResult,
    EncoderSpec,
    RunConfig,
    config_fingerprint,
    run_ablation,
    run_benchmark,
    write_ablation,
    write_report,
)
from .embeddings import (
    EmbeddingStore,
    EncoderProfile,
    StoreSegment,
    cosine,
    normalize,
    write_embeddings,
    write_embeddings_text,
)
from .errors import (
    ConfigError,
    DataIntegrityError,
    DimMismatchError,
    DuplicateIdError,
    EmbeddingFormatError,
    MissingEmbeddingError,
    NonFiniteVectorError,
    ProviderError,
)
from .knowledge import (
    Chunk,
    ChunkConfig,
    KnowledgeBase,
    RefinementPromptSet,
    RefinementTelemetry,
    SpeciesRecord,
    chunk_corpus,
    ingest_records,
    names_only_corpus,
    read_kb,
    refine_summary,
    write_kb,
)
from .lmm import (
    CandidateSummary,
    Prediction,
    PromptBundle,
    assemble_prompt,
    classify,
    classify_direct,
    resolve_prediction,
)
from .metrics import (
    MetricsReport,
    RetrievalRanking,
    aggregate_metrics,
    mrr_at_k,
)
from .oracle import oracle_pipeline
from .providers import (
    EchoProvider,
    FixedProvider,
    KeywordOracleProvider,
    build_provider,
)
from .rerank import RerankConfig, intra_score, rerank, select_context
from .retrieval import (
    QueryInput,
    RetrievalConfig,
    ScoredCandidate,
    ensemble_scores,
    retrieve,
    score_chunk,
    top_m,
)
from .simlab import SimConfig, SyntheticInstance, generate_instance, write_instance

__version__ = "0.1.0"
