"""Embedding providers, contrastive adapter training, exact top-N retrieval,
and hit-rate evaluation.

The trainable piece is a square linear adapter applied on top of frozen base
embeddings, with outputs re-normalized to unit length. It is fit with a
multi-positive normalized-temperature cross-entropy loss so that texts from
the same sector score higher cosine similarity than texts from different
sectors. Retrieval treats each non-empty profile component as a query and
is exact (full sort), with ties broken by ascending article id so datasets
are reproducible.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .gateway import FILING_KEYS

UNIT_NORM_TOL = 1e-6


class BatchSkip(Exception):
    """The batch cannot form a contrastive objective; skip it."""


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    batch_size: int = 64
    epochs: int = 60
    learning_rate: float = 5e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0 and learning_rate positive")


@dataclass(frozen=True)
class RetrievalConfig:
    n: int = 10

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError("retrieval cutoff must be >= 0")


@dataclass(frozen=True)
class RetrievedItem:
    article_id: str
    cosine: float
    component: str
    rank: int


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return matrix / np.maximum(norms, 1e-12)


def embed(texts: Sequence[str], provider, model_id: str = "") -> np.ndarray:
    """Embed texts through any provider exposing embed_batch; unit rows out."""
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not isinstance(t, str) or not t:
            raise ValueError("every text must be a non-empty string")
    vectors = np.asarray(provider.embed_batch(list(texts), model_id), dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise ValueError(f"provider returned shape {vectors.shape} for {len(texts)} texts")
    vectors = normalize_rows(vectors)
    if not np.all(np.abs(np.linalg.norm(vectors, axis=1) - 1.0) <= UNIT_NORM_TOL):
        raise ValueError("embedding normalization failed")
    return vectors


class HttpEmbeddingProvider:
    """POSTs {model, input} and reads {"data": [{"embedding": [...]}, ...]}."""

    def __init__(self, config, transport=None):
        from .gateway import ProviderConfig, TransportError  # noqa: F401  (shared config type)

        self.config = config
        self._transport = transport

    def embed_batch(self, texts: list[str], model_id: str) -> np.ndarray:
        import requests

        from .gateway import ProviderError, TransportError

        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            import os

            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        payload = {"model": model_id, "input": texts}
        try:
            response = requests.post(self.config.endpoint_url, json=payload, headers=headers, timeout=self.config.timeout_s)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if not 200 <= response.status_code < 300:
            raise ProviderError(response.status_code, response.text[:200])
        data = response.json()["data"]
        return np.array([row["embedding"] for row in data], dtype=np.float64)


class CachedEmbeddings:
    """Content-digest-keyed vector cache so re-runs never re-pay for embeddings."""

    def __init__(self, provider, cache_dir: str | Path):
        self.provider = provider
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.provider_calls = 0

    @staticmethod
    def _key(text: str, model_id: str) -> str:
        return hashlib.sha256(f"{model_id}\x00{text}".encode("utf-8")).hexdigest()

    def embed_batch(self, texts: list[str], model_id: str) -> np.ndarray:
        paths = [self.cache_dir / f"{self._key(t, model_id)}.npy" for t in texts]
        missing = [i for i, p in enumerate(paths) if not p.exists()]
        if missing:
            fresh = np.asarray(self.provider.embed_batch([texts[i] for i in missing], model_id), dtype=np.float64)
            self.provider_calls += len(missing)
            for row, i in zip(fresh, missing):
                tmp = paths[i].with_suffix(".tmp.npy")
                np.save(tmp, row)
                tmp.replace(paths[i])
        return np.stack([np.load(p) for p in paths])


def apply_adapter(adapter: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Map base embeddings through the adapter and re-normalize to unit length."""
    return normalize_rows(vectors @ adapter.T)


def nt_xent_loss(
    embeddings: np.ndarray,
    sector_labels: Sequence[str],
    adapter: np.ndarray,
    temperature: float,
) -> tuple[float, np.ndarray]:
    """Multi-positive contrastive loss and its exact gradient w.r.t. the adapter.

    For anchor i with same-sector set P(i):
        loss_i = -(1/|P(i)|) * sum_{p in P(i)} log( exp(s_ip/t) / sum_{j != i} exp(s_ij/t) )
    where s is the cosine of adapter outputs. The batch loss is the mean over
    anchors that have at least one positive; items without positives still
    act as negatives. Raises BatchSkip when no contrastive objective exists
    (fewer than 2 items or 2 sectors, or no anchor has a positive).
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = list(sector_labels)
    B = X.shape[0]
    if B < 2 or len(labels) != B:
        raise BatchSkip("batch needs >= 2 labeled items")
    if len(set(labels)) < 2:
        raise BatchSkip("batch needs >= 2 distinct sectors")
    lab = np.array(labels)
    pos_mask = (lab[:, None] == lab[None, :]) & ~np.eye(B, dtype=bool)
    pos_counts = pos_mask.sum(axis=1)
    anchors = pos_counts > 0
    if not anchors.any():
        raise BatchSkip("no anchor has a same-sector positive")

    Z = X @ adapter.T
    norms = np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-12)
    U = Z / norms
    S = U @ U.T
    logits = S / temperature
    np.fill_diagonal(logits, -np.inf)

    # Stable log-sum-exp over j != i and the softmax used by the gradient.
    row_max = logits.max(axis=1, keepdims=True)
    exp_shift = np.exp(logits - row_max)
    denom = exp_shift.sum(axis=1, keepdims=True)
    lse = (row_max + np.log(denom)).ravel()
    softmax = exp_shift / denom

    n_anchors = int(anchors.sum())
    per_anchor = lse[anchors] - (S[anchors] / temperature * pos_mask[anchors]).sum(axis=1) / pos_counts[anchors]
    loss = float(per_anchor.mean())

    # dL/dS: anchors contribute (softmax - positives/|P|) / (t * n_anchors).
    G = np.zeros((B, B))
    G[anchors] = (softmax[anchors] - pos_mask[anchors] / pos_counts[anchors, None]) / (temperature * n_anchors)
    M = G + G.T
    dU = M @ U
    dZ = (dU - (dU * U).sum(axis=1, keepdims=True) * U) / norms
    grad = dZ.T @ X
    return loss, grad


def train_adapter(
    embeddings: np.ndarray,
    sector_labels: Sequence[str],
    config: ContrastiveConfig,
) -> tuple[np.ndarray, list[float]]:
    """Fit the adapter by mini-batch Adam from an identity initialization.

    Deterministic given config.seed. Returns (adapter, per-epoch loss log);
    zero epochs returns the exact identity.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = list(sector_labels)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ValueError("embeddings and sector_labels must align")
    if len(set(labels)) < 2:
        raise TrainingError("contrastive training needs at least 2 sectors")
    d = X.shape[1]
    adapter = np.eye(d)
    if config.epochs == 0:
        return adapter, []
    from .optim import Adam

    params = {"adapter": adapter}
    optimizer = Adam(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    history: list[float] = []
    lab = np.array(labels)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses: list[float] = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                loss, grad = nt_xent_loss(X[idx], lab[idx], params["adapter"], config.temperature)
            except BatchSkip:
                continue
            optimizer.step({"adapter": grad})
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
    return params["adapter"], history


def rank_pool(
    query_vectors: np.ndarray,
    pool_ids: Sequence[str],
    pool_vectors: np.ndarray,
    adapter: np.ndarray,
    n: int,
    components: Sequence[str] | None = None,
) -> list[RetrievedItem]:
    """Exact per-query top-n over cosines of adapter outputs, unioned.

    Per query, candidates are ordered by (cosine desc, article_id asc) and the
    first n taken. The union is deduplicated keeping each article's best
    (query, rank); the result is ordered by best cosine desc, ties broken by
    ascending article_id. n == 0 yields [].
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0 or len(pool_ids) == 0 or query_vectors.size == 0:
        return []
    names = list(components) if components is not None else [str(i) for i in range(query_vectors.shape[0])]
    Uq = apply_adapter(adapter, np.atleast_2d(query_vectors))
    Up = apply_adapter(adapter, np.atleast_2d(pool_vectors))
    S = Uq @ Up.T
    best: dict[str, RetrievedItem] = {}
    for qi in range(S.shape[0]):
        order = sorted(range(len(pool_ids)), key=lambda p: (-S[qi, p], pool_ids[p]))[:n]
        for rank, p in enumerate(order):
            item = RetrievedItem(article_id=pool_ids[p], cosine=float(S[qi, p]), component=names[qi], rank=rank)
            held = best.get(item.article_id)
            if held is None or item.cosine > held.cosine or (item.cosine == held.cosine and item.rank < held.rank):
                best[item.article_id] = item
    return sorted(best.values(), key=lambda r: (-r.cosine, r.article_id))


def retrieve_top_n(
    profile: Mapping[str, str],
    pool: Sequence[tuple[str, np.ndarray]],
    adapter: np.ndarray,
    n: int,
    embed_texts: Callable[[list[str]], np.ndarray],
) -> list[RetrievedItem]:
    """Retrieve for one (company, trading day) using the day's profile.

    Every non-empty profile component is a query; empty components are
    skipped. pool holds (article_id, base embedding) for the company-level
    articles paired to that day.
    """
    components = [key for key in FILING_KEYS if profile.get(key, "")]
    if n == 0 or not components or not pool:
        return []
    query_vectors = embed_texts([profile[key] for key in components])
    pool_ids = [aid for aid, _ in pool]
    pool_vectors = np.stack([vec for _, vec in pool])
    return rank_pool(query_vectors, pool_ids, pool_vectors, adapter, n, components=components)


def hit_rate(cases: Iterable[tuple[Sequence[str], Iterable[str]]]) -> float:
    """Fraction of evaluated days whose retrieved set hits a target article.

    Each case is (retrieved article ids, ground-truth target ids); every
    evaluated day must have a non-empty ground-truth pool.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("hit_rate needs at least one evaluated day")
    hits = 0
    for retrieved, targets in cases:
        target_set = set(targets)
        if not target_set:
            raise ValueError("evaluated day has an empty ground-truth target pool")
        if target_set & set(retrieved):
            hits += 1
    return hits / len(cases)


def save_adapter(path: str | Path, adapter: np.ndarray) -> None:
    """Binary format: little-endian int32 dimension, then row-major float64."""
    adapter = np.asarray(adapter, dtype=np.float64)
    if adapter.ndim != 2 or adapter.shape[0] != adapter.shape[1]:
        raise ValueError("adapter must be a square matrix")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(struct.pack("<i", adapter.shape[0]))
        fh.write(adapter.astype("<f8").tobytes(order="C"))


def load_adapter(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        (dim,) = struct.unpack("<i", fh.read(4))
        data = np.frombuffer(fh.read(dim * dim * 8), dtype="<f8")
    return data.reshape(dim, dim).astype(np.float64)
