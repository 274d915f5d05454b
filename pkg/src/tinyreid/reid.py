"""Gallery enrollment and nearest-neighbour identity matching.

Embeddings are L2-normalized float32 vectors regardless of backend; the
gallery keeps dequantized embeddings even for int8 models.  Matching uses
cosine distance 1 - <q, e>, which on unit vectors ranks identically to
Euclidean distance.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import int8 as int8_mod
from .fp32 import ModelWeightsF32, forward_f32
from .int8 import ModelWeightsI8


@dataclass
class GalleryDB:
    embed_dim: int
    records: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        for ident, emb in self.records:
            if emb.shape != (self.embed_dim,):
                raise ValueError(f"record {ident!r}: embedding dim {emb.shape} != {self.embed_dim}")
            n = float(np.linalg.norm(emb.astype(np.float64)))
            if abs(n - 1.0) > 1e-5 and n > 1e-12:
                raise ValueError(f"record {ident!r}: embedding norm {n} not unit")

    def matrix(self) -> np.ndarray:
        return np.stack([e for _, e in self.records]) if self.records else \
            np.zeros((0, self.embed_dim), dtype=np.float32)

    def identities(self) -> list[str]:
        return [i for i, _ in self.records]


def embed(model: ModelWeightsF32 | ModelWeightsI8, image: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of a preprocessed [-1, 1] float image."""
    if isinstance(model, ModelWeightsF32):
        return forward_f32(model, image)
    if isinstance(model, ModelWeightsI8):
        q = int8_mod.quantize_image(model, image)
        emb_q, qp = int8_mod.forward_i8(model, q)
        return int8_mod.dequantize_embedding(emb_q, qp)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def embed_many(model, images, threads: int | None = None) -> list[np.ndarray]:
    images = list(images)
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda im: embed(model, im), images))
    return [embed(model, im) for im in images]


def enroll(model, labeled_images, threads: int | None = None) -> GalleryDB:
    """Build a gallery from (identity, image) pairs, preserving order."""
    labeled = list(labeled_images)
    if not labeled:
        raise ValueError("gallery enrollment needs at least one image")
    embs = embed_many(model, (im for _, im in labeled), threads=threads)
    d = model.spec.embed_dim
    return GalleryDB(embed_dim=d, records=[(i, e) for (i, _), e in zip(labeled, embs)])


def rank_gallery(db: GalleryDB, q_embedding: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(order, distances): gallery indices sorted by ascending cosine
    distance, ties broken by lower record index."""
    if q_embedding.shape != (db.embed_dim,):
        raise ValueError(f"query dim {q_embedding.shape} != gallery dim {db.embed_dim}")
    dists = 1.0 - db.matrix().astype(np.float64) @ q_embedding.astype(np.float64)
    return np.argsort(dists, kind="stable"), dists


def query(db: GalleryDB, q_embedding: np.ndarray, k: int) -> list[tuple[str, int, float]]:
    """Top-k gallery records as (identity, record index, distance)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not db.records:
        raise ValueError("gallery is empty")
    order, dists = rank_gallery(db, q_embedding)
    ids = db.identities()
    return [(ids[i], int(i), float(dists[i])) for i in order[: min(k, len(order))]]
