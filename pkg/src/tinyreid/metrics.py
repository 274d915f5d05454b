"""Retrieval evaluation: mean Average Precision and CMC Top-k."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reid import GalleryDB, rank_gallery

CMC_RANKS = (1, 5, 10)


@dataclass(frozen=True)
class EvalReport:
    mAP: float
    cmc: dict[int, float]
    per_query: list[tuple[int, float, int]]  # (query index, AP, first-hit rank)


def average_precision(flags) -> float:
    """AP of a ranked boolean relevance list: mean of precision at each
    relevant position."""
    flags = list(flags)
    total = sum(flags)
    if total == 0:
        raise ValueError("query has no relevant gallery item")
    hits = 0
    acc = 0.0
    for i, f in enumerate(flags, start=1):
        if f:
            hits += 1
            acc += hits / i
    return acc / total


def first_hit_rank(flags) -> int:
    for i, f in enumerate(flags, start=1):
        if f:
            return i
    raise ValueError("query has no relevant gallery item")


def cmc_topk(first_hits, k: int) -> float:
    """Fraction of queries whose first correct match lands within rank k."""
    first_hits = list(first_hits)
    if any(r < 1 for r in first_hits):
        raise ValueError("ranks are 1-based")
    if not first_hits:
        raise ValueError("no queries")
    return sum(1 for r in first_hits if r <= k) / len(first_hits)


def evaluate_rankings(relevance_lists) -> EvalReport:
    """Aggregate per-query ranked relevance flags into a report."""
    aps = []
    hits = []
    per_query = []
    for qi, flags in enumerate(relevance_lists):
        ap = average_precision(flags)
        fh = first_hit_rank(flags)
        aps.append(ap)
        hits.append(fh)
        per_query.append((qi, ap, fh))
    return EvalReport(
        mAP=float(np.mean(aps)),
        cmc={k: cmc_topk(hits, k) for k in CMC_RANKS},
        per_query=per_query,
    )


def rank_relevance(distances: np.ndarray, q_ids, g_ids) -> list[list[bool]]:
    """Ranked relevance flags from a query-by-gallery distance matrix.

    Ties are broken by lower gallery index (stable sort), matching the
    runtime matcher.
    """
    g_ids = list(g_ids)
    out = []
    for qi, ident in enumerate(q_ids):
        if ident not in g_ids:
            raise ValueError(f"query identity {ident!r} absent from gallery")
        order = np.argsort(distances[qi], kind="stable")
        out.append([g_ids[j] == ident for j in order])
    return out


def evaluate(db: GalleryDB, queries) -> EvalReport:
    """Full gallery ranking per (identity, embedding) query."""
    queries = list(queries)
    if not queries:
        raise ValueError("no queries")
    g_ids = db.identities()
    known = set(g_ids)
    relevance = []
    for ident, emb in queries:
        if ident not in known:
            raise ValueError(f"query identity {ident!r} absent from gallery")
        order, _ = rank_gallery(db, emb)
        relevance.append([g_ids[j] == ident for j in order])
    return evaluate_rankings(relevance)
