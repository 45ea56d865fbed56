"""Frozen-embedding adapters, retrieval metrics and drift tooling."""

from ._core import (
    Adapter,
    AdapterConfig,
    ConfigError,
    DataError,
    Error,
    FormatError,
    EmbeddingSet,
    EvalOptions,
    IvfIndex,
    MetricsReport,
    NumericError,
    SearchResult,
    Split,
    TrainConfig,
    anns_recall,
    apply_adapter,
    brute_force_knn,
    evaluate_retrieval,
    gen_synthetic,
    import_csv,
    label_precision,
    linear_illustration,
    load_embeddings,
    load_params,
    make_split,
    run_cli,
    save_embeddings,
    save_params,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
