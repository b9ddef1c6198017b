# Copyright (c) 2026, The kbgate Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the kbgate core.

Scalar helpers are re-exported as-is. Record-level functions take and
return plain dicts shaped like the JSONL rows the CLI writes.
"""

import json as _json

from ._kbgate import (  # noqa: F401
    DEFAULT_LABEL_EPSILON,
    DEFAULT_SKB_EPSILON,
    ConfigError,
    IntegrityError,
    KbgateError,
    ParseError,
    RangeError,
    ValidationError,
    __version__,
    flip_score,
    format_soft_target,
    hard_label,
    normalize,
    parse_grid,
    parse_hard_verdict,
    parse_soft_verdict,
    rescale_to_percent,
    run_cli,
    soft_indicator,
    token_accuracy,
)
from . import _kbgate


def build_labels(judged, epsilon=DEFAULT_LABEL_EPSILON, s_w=1.0, s_c=5.0):
    """Hard and soft labels for judged queries (dicts from judged.jsonl)."""
    return _json.loads(_kbgate._build_labels(_json.dumps(list(judged)), epsilon, s_w, s_c))


def dataset_stats(judged, model=""):
    """Per-source count, mean and population std of the mean scores."""
    return _json.loads(_kbgate._dataset_stats(_json.dumps(list(judged)), model))


def stats_table(judged, model=""):
    return _kbgate._stats_table(_json.dumps(list(judged)), model)


def epsilon_sweep(grid, soft_scores, none_metrics, all_metrics):
    """Rows of (epsilon, search ratio, llm, token accuracy)."""
    return _kbgate._epsilon_sweep(
        list(grid), dict(soft_scores), _json.dumps(list(none_metrics)), _json.dumps(list(all_metrics))
    )


def judged_query(query_id, source, scores):
    """Builds a judged.jsonl-style row from raw per-sample scores (None = invalid)."""
    valid = [s for s in scores if s is not None]
    return {
        "query_id": query_id,
        "source": source,
        "scores": [{"index": i, "score": s, "raw": ""} for i, s in enumerate(scores)],
        "valid_count": len(valid),
        "invalid_count": len(scores) - len(valid),
        "mean_score": sum(valid) / len(valid) if valid else 0.0,
    }
