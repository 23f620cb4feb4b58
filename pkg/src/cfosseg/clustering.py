"""Lloyd k-means over latent codes, cluster reporting, and the stratified
per-cluster sampling that builds training sets from wildly unbalanced tiles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import LatentCode
from .manifest import DatasetManifest, ManifestEntry


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict[str, int]
    seed: int
    objective_history: list[float] = field(default_factory=list)


@dataclass
class ClusterReport:
    counts: list[int]            # ascending
    cluster_order: list[int]     # cluster index for each count
    ratios: list[float]          # counts / smallest count
    samples: dict[int, list[str]]


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clipped at zero against roundoff
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    for i in range(1, k):
        d2 = _sq_dists(x, centroids[:i]).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centroids[i] = x[rng.integers(n)]
        else:
            centroids[i] = x[rng.choice(n, p=d2 / total)]
    return centroids


def kmeans(codes, k: int = 5, seed: int = 0, tol: float = 1e-4, max_iter: int = 300,
           init_centroids: np.ndarray | None = None) -> ClusterModel:
    """Lloyd iterations from k-means++ seeding.

    Stops when the largest centroid shift drops below `tol` or after
    `max_iter` iterations. Clusters emptied by an assignment step are
    reseeded with the point farthest from its current centroid, which keeps
    the objective non-increasing; every iteration's objective is recorded
    and a regression is a hard error.
    """
    names = [c.name for c in codes]
    x = np.stack([np.asarray(c.code, dtype=np.float64) for c in codes])
    n = x.shape[0]
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if n < k:
        raise ClusteringError(f"need at least k={k} codes, got {n}")
    rng = np.random.default_rng(seed)
    centroids = (np.asarray(init_centroids, dtype=np.float64).copy()
                 if init_centroids is not None else _plusplus_init(x, k, rng))
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), labels]
        for c in range(k):
            if not np.any(labels == c):
                far = int(point_d2.argmax())
                labels[far] = c
                centroids[c] = x[far]
                point_d2[far] = 0.0
        objective = float(point_d2.sum())
        if history and objective > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise ClusteringError("k-means objective increased between iterations")
        history.append(objective)
        new_centroids = centroids.copy()
        for c in range(k):
            members = x[labels == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    # final nearest-centroid assignment against the converged centroids
    labels = _sq_dists(x, centroids).argmin(axis=1)
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments={name: int(lbl) for name, lbl in zip(names, labels)},
        seed=seed,
        objective_history=history,
    )


def cluster_report(model: ClusterModel, sample_cap: int = 100) -> ClusterReport:
    by_cluster: dict[int, list[str]] = {c: [] for c in range(model.k)}
    for name, c in model.assignments.items():
        by_cluster[c].append(name)
    counted = sorted(((len(v), c) for c, v in by_cluster.items()))
    counts = [n for n, _ in counted]
    order = [c for _, c in counted]
    smallest = max(counts[0], 1)
    return ClusterReport(
        counts=counts,
        cluster_order=order,
        ratios=[n / smallest for n in counts],
        samples={c: sorted(v)[:sample_cap] for c, v in by_cluster.items()},
    )


def stratified_select(manifest: DatasetManifest, model: ClusterModel,
                      quotas, seed: int = 0, split: str = "train") -> DatasetManifest:
    """Pick exactly quotas[c] entries per cluster, uniformly at random.

    Manifest entries are matched to cluster assignments by image file stem.
    A quota above the cluster's population is an explicit shortfall error.
    """
    quotas = list(quotas)
    if len(quotas) != model.k:
        raise ClusteringError(f"got {len(quotas)} quotas for k={model.k} clusters")
    pools: dict[int, list[ManifestEntry]] = {c: [] for c in range(model.k)}
    for e in manifest.entries:
        c = model.assignments.get(Path(e.image_path).stem)
        if c is not None:
            pools[c].append(e)
    for c, quota in enumerate(quotas):
        if quota > len(pools[c]):
            raise ClusteringError(
                f"cluster {c} holds {len(pools[c])} tiles, cannot satisfy quota {quota}"
            )
    rng = np.random.default_rng(seed)
    selected: list[ManifestEntry] = []
    for c, quota in enumerate(quotas):
        pool = sorted(pools[c], key=lambda e: e.image_path)
        idx = rng.choice(len(pool), size=quota, replace=False) if quota else []
        for i in sorted(int(j) for j in idx):
            e = pool[i]
            selected.append(ManifestEntry(
                image_path=e.image_path,
                mask_path=e.mask_path,
                split=split,
                provenance=e.provenance,
                cluster_index=c,
            ))
    return DatasetManifest(seed=seed, entries=selected)
