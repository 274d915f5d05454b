"""Few-shot site adaptation: freeze the backbone, retrain only the final
embedding layer with a triplet loss on a handful of images per identity.

Backbone features are extracted once and cached; the optimization loop is
plain full-batch gradient descent in float64, so results are exactly
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fp32 import ModelWeightsF32, backbone_features

DEFAULT_MARGIN = 0.2
DEFAULT_LR = 0.01
DEFAULT_EPOCHS = 100


@dataclass
class HeadParams:
    """The only trainable state: the embedding FC weight and bias."""

    W: np.ndarray  # (1280, d)
    b: np.ndarray  # (d,)

    def copy(self) -> "HeadParams":
        return HeadParams(self.W.copy(), self.b.copy())


@dataclass(frozen=True)
class FinetuneConfig:
    margin: float = DEFAULT_MARGIN
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0


def extract_features(model: ModelWeightsF32, images, threads: int | None = None) -> np.ndarray:
    """Frozen-backbone features (pooled, pre-FC) for each image."""
    images = list(images)
    if threads is not None and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            feats = list(pool.map(lambda im: backbone_features(model, im), images))
    else:
        feats = [backbone_features(model, im) for im in images]
    return np.stack(feats)


def triplet_loss(emb_a, emb_p, emb_n, margin: float) -> float:
    """Hinge on squared Euclidean distances of unit embeddings:
    max(0, d(a,p) - d(a,n) + margin)."""
    d_ap = float(np.sum((np.asarray(emb_a, np.float64) - emb_p) ** 2))
    d_an = float(np.sum((np.asarray(emb_a, np.float64) - emb_n) ** 2))
    return max(0.0, d_ap - d_an + margin)


def mine_triplets(labels) -> list[tuple[int, int, int]]:
    """Batch-all mining: every (anchor, positive, negative) index triple
    with matching anchor/positive identity, in deterministic order."""
    labels = list(labels)
    n = len(labels)
    out = []
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for neg in range(n):
                if labels[neg] != labels[a]:
                    out.append((a, p, neg))
    return out


def _head_forward(features: np.ndarray, W: np.ndarray, b: np.ndarray):
    z = features @ W + b
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate pre-normalization embedding (norm < 1e-12)")
    e = z / norms[:, None]
    return z, norms, e


def head_loss(features, W, b, triplets, margin: float) -> float:
    _, _, e = _head_forward(np.asarray(features, np.float64),
                            np.asarray(W, np.float64), np.asarray(b, np.float64))
    losses = [triplet_loss(e[a], e[p], e[n], margin) for a, p, n in triplets]
    return float(np.mean(losses))


def head_gradient(features, W, b, triplets, margin: float):
    """Analytic gradient of the mean triplet loss through FC + normalize.

    The normalization Jacobian (I - ee^T)/||z|| is applied per sample;
    inactive hinges contribute nothing.  Returns (dW, db).
    """
    if not triplets:
        raise ValueError("need at least one triplet")
    f = np.asarray(features, np.float64)
    W = np.asarray(W, np.float64)
    b = np.asarray(b, np.float64)
    _, norms, e = _head_forward(f, W, b)

    g_e = np.zeros_like(e)
    for a, p, n in triplets:
        d_ap = np.sum((e[a] - e[p]) ** 2)
        d_an = np.sum((e[a] - e[n]) ** 2)
        if d_ap - d_an + margin <= 0:
            continue
        g_e[a] += 2.0 * (e[n] - e[p])
        g_e[p] += -2.0 * (e[a] - e[p])
        g_e[n] += 2.0 * (e[a] - e[n])
    g_e /= len(triplets)

    # back through e = z / ||z||
    g_z = (g_e - np.sum(g_e * e, axis=1, keepdims=True) * e) / norms[:, None]
    dW = f.T @ g_z
    db = g_z.sum(axis=0)
    return dW, db


def finetune_head(model: ModelWeightsF32, labeled_images,
                  config: FinetuneConfig = FinetuneConfig(),
                  features: np.ndarray | None = None) -> HeadParams:
    """Gradient-descend the embedding head on a few-shot set.

    ``labeled_images`` is a list of (identity, image) pairs.  Keeps the
    checkpoint from the last epoch that improved the batch-all loss; zero
    epochs returns the head unchanged.  The backbone is never touched.
    """
    labeled = list(labeled_images)
    labels = [ident for ident, _ in labeled]
    counts = {}
    for ident in labels:
        counts[ident] = counts.get(ident, 0) + 1
    if len(counts) < 2 or any(c < 2 for c in counts.values()):
        raise ValueError("few-shot set needs >= 2 identities with >= 2 images each")

    if features is None:
        features = extract_features(model, (im for _, im in labeled))
    f = np.asarray(features, np.float64)
    triplets = mine_triplets(labels)

    W = model.tensors["fc.w"].astype(np.float64)
    b = model.tensors["fc.b"].astype(np.float64)
    best = HeadParams(W.copy(), b.copy())
    best_loss = head_loss(f, W, b, triplets, config.margin)
    for _ in range(config.epochs):
        dW, db = head_gradient(f, W, b, triplets, config.margin)
        W = W - config.lr * dW
        b = b - config.lr * db
        loss = head_loss(f, W, b, triplets, config.margin)
        if loss < best_loss:
            best_loss = loss
            best = HeadParams(W.copy(), b.copy())
    return best


def apply_head(model: ModelWeightsF32, head: HeadParams) -> ModelWeightsF32:
    """New float model with the adapted embedding layer swapped in."""
    tensors = dict(model.tensors)
    tensors["fc.w"] = head.W.astype(np.float32)
    tensors["fc.b"] = head.b.astype(np.float32)
    return ModelWeightsF32(spec=model.spec, tensors=tensors)


def sample_shots(rows, shots: int, seed: int) -> list[tuple[str, str]]:
    """Pick ``shots`` images per identity from manifest rows (path, identity),
    deterministically."""
    import random

    by_id: dict[str, list[str]] = {}
    for path, ident in rows:
        by_id.setdefault(ident, []).append(path)
    rng = random.Random(seed)
    out = []
    for ident in sorted(by_id):
        paths = sorted(by_id[ident])
        rng.shuffle(paths)
        out += [(ident, p) for p in paths[: min(shots, len(paths))]]
    return out
