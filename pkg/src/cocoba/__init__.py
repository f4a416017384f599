"""Active learning for query-anchored short text.

Two contextual views per posting (document-level and query-word-level),
bagged co-testing over them, and contention-density query scoring, together
with baseline strategies, a benchmark harness, and an annotation service.
"""

from cocoba.corpus import (
    CANONICAL_TOKEN,
    Dataset,
    PoolState,
    Posting,
    canonicalize_terms,
    cold_start_split,
    load_dataset,
    select_anchor_span,
    write_dataset,
)

__all__ = [
    "CANONICAL_TOKEN",
    "Dataset",
    "PoolState",
    "Posting",
    "canonicalize_terms",
    "cold_start_split",
    "load_dataset",
    "select_anchor_span",
    "write_dataset",
]

__version__ = "0.1.0"
