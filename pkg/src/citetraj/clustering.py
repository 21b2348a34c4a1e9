"""Clustering in score space plus shape-based labeling.

Three clustering families cover the robustness comparison: k-means
(k-means++ seeding, Lloyd iterations, best of restarts), PAM k-medoids
(build + swap, squared Euclidean cost), and Ward agglomeration via the
Lance-Williams recurrence.  Cluster centroids are mapped back to intensity
curves through the latent basis and labeled by shape: evergreen (no yearly
decline beyond tolerance), delayed (late peak), or normal split into high
and low levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .fpca import LatentBasis
from .poisson import TrajectoryFit

__all__ = [
    "ClusterModel",
    "ShapeThresholds",
    "SweepReport",
    "kmeans",
    "kmedoids",
    "ward",
    "label_clusters",
    "classify_item",
    "robustness_sweep",
    "adjusted_rand_index",
    "silhouette_mean",
    "CLUSTER_LABELS",
    "ITEM_LABELS",
]

CLUSTER_LABELS = ("evergreen", "delayed", "normal-low", "normal-high")
ITEM_LABELS = ("evergreen", "flash-in-the-pan", "delayed document", "normal document")

_MAX_LLOYD_ITER = 300


@dataclass(frozen=True)
class ShapeThresholds:
    """Tunable constants for the shape rules.

    ``evergreen_rel_tol`` is the per-step decline tolerated as a fraction of
    the curve maximum; a perfectly flat curve therefore counts as evergreen
    (no decline).  ``delayed_frac`` places the late-peak cutoff at T/2;
    flash-in-the-pan needs a peak within T/6 and an endpoint below 20% of
    the peak.
    """

    evergreen_rel_tol: float = 0.05
    delayed_frac: float = 0.5
    flash_peak_frac: float = 1.0 / 6.0
    flash_end_frac: float = 0.2


@dataclass(frozen=True)
class ClusterModel:
    """A fitted clustering: centroids in score space plus assignments.

    ``within_ss`` is the summed squared Euclidean distance of points to
    their cluster's ``centroids`` row (for k-medoids the medoid points).
    ``details`` carries method diagnostics: per-iteration within_ss history
    for the winning k-means restart, medoid indices, or the Ward merge
    trace.
    """

    method: str
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    within_ss: float
    seed: int
    labels: tuple[str, ...] | None = None
    details: dict = field(default_factory=dict)

    def with_labels(self, labels: Sequence[str]) -> "ClusterModel":
        if len(labels) != self.k:
            raise ConfigError(f"need {self.k} labels, got {len(labels)}")
        return replace(self, labels=tuple(labels))


def _check_points(points, k: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ConfigError(f"points must be 2-d, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("points contain non-finite values")
    if k < 1:
        raise ConfigError(f"need K >= 1, got {k}")
    if len(points) < k:
        raise ConfigError(f"cannot form {k} clusters from {len(points)} points")
    return points


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _within_ss(points, centers, assign) -> float:
    diff = points - centers[assign]
    return float(np.einsum("nd,nd->", diff, diff))


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = _sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[j] = points[pick]
        d2 = np.minimum(d2, _sq_dists(points, centers[j : j + 1])[:, 0])
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray):
    """Lloyd iterations until stable assignments; returns history too."""
    n, k = len(points), len(centers)
    prev = None
    history = []
    for _ in range(_MAX_LLOYD_ITER):
        d2 = _sq_dists(points, centers)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        used = np.zeros(n, dtype=bool)
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        empties = [j for j in range(k) if not np.any(assign == j)]
        if empties:
            # Re-seed each empty centroid at the point currently farthest
            # from its assigned centroid (one point per empty cluster).
            gaps = d2[np.arange(n), assign].copy()
            for j in empties:
                gaps[used] = -np.inf
                far = int(np.argmax(gaps))
                centers[j] = points[far]
                used[far] = True
    d2 = _sq_dists(points, centers)
    assign = np.argmin(d2, axis=1)
    ss = float(d2[np.arange(n), assign].sum())
    return centers, assign, ss, history


def kmeans(points, k: int, seed: int = 0, restarts: int = 10) -> ClusterModel:
    """Best-of-restarts k-means with k-means++ seeding.

    Restart r draws from ``numpy.random.default_rng((seed, r))``, so a
    single user seed expands to per-restart streams by that counter scheme
    and results are exactly reproducible.  Ties between restarts go to the
    lower restart index.
    """
    points = _check_points(points, k)
    if restarts < 1:
        raise ConfigError(f"need at least 1 restart, got {restarts}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        centers = _kmeans_pp_init(points, k, rng)
        centers, assign, ss, history = _lloyd(points, centers.copy())
        if best is None or ss < best[0]:
            best = (ss, centers, assign, history, r)
    ss, centers, assign, history, r = best
    return ClusterModel(
        method="kmeans", k=k, centroids=centers, assignments=assign,
        within_ss=ss, seed=seed,
        details={"history": history, "restart": r, "restarts": restarts},
    )


def kmedoids(points, k: int, seed: int = 0) -> ClusterModel:
    """PAM (build + swap) k-medoids under squared Euclidean cost.

    Fully deterministic: build picks greedily, swap applies the best strict
    improvement each pass, ties resolve to the smallest index.  ``seed`` is
    accepted for interface parity but unused.
    """
    points = _check_points(points, k)
    n = len(points)
    d = _sq_dists(points, points)

    # BUILD: start from the 1-medoid optimum, then add greedily.
    medoids = [int(np.argmin(d.sum(axis=1)))]
    nearest = d[:, medoids[0]].copy()
    while len(medoids) < k:
        gains = np.maximum(nearest[:, None] - d, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        pick = int(np.argmax(gains))
        medoids.append(pick)
        nearest = np.minimum(nearest, d[:, pick])

    # SWAP: replace (medoid, candidate) pairs while the cost strictly drops.
    medoids = sorted(medoids)
    while True:
        dm = d[:, medoids]
        order = np.argsort(dm, axis=1, kind="stable")
        d1 = dm[np.arange(n), order[:, 0]]
        d2 = dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
        cost = float(d1.sum())
        best_cost, best_swap = cost, None
        in_set = np.zeros(n, dtype=bool)
        in_set[medoids] = True
        candidates = np.nonzero(~in_set)[0]
        if candidates.size == 0:
            break
        for pos in range(k):
            removed_nearest = np.where(order[:, 0] == pos, d2, d1)
            trial = np.minimum(removed_nearest[:, None], d[:, candidates])
            costs = trial.sum(axis=0)
            best_h = int(np.argmin(costs))
            if costs[best_h] < best_cost - 1e-12:
                best_cost = float(costs[best_h])
                best_swap = (pos, int(candidates[best_h]))
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        medoids = sorted(medoids)

    med_arr = np.asarray(medoids)
    assign = np.argmin(d[:, med_arr], axis=1)
    centroids = points[med_arr]
    return ClusterModel(
        method="kmedoids", k=k, centroids=centroids, assignments=assign,
        within_ss=_within_ss(points, centroids, assign), seed=seed,
        details={"medoid_indices": [int(m) for m in medoids]},
    )


def ward(points, k: int) -> ClusterModel:
    """Agglomerative clustering with Ward linkage, cut at K clusters.

    Squared cluster distances follow the Lance-Williams recurrence
    d2(s+t, v) = [(n_s+n_v) d2(s,v) + (n_t+n_v) d2(t,v) - n_v d2(s,t)] / N
    with N = n_s + n_t + n_v, starting from pairwise squared Euclidean
    distances.  Ties pick the lexicographically smallest active pair.
    """
    points = _check_points(points, k)
    n = len(points)
    d2 = _sq_dists(points, points).astype(float)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    members: list[list[int]] = [[i] for i in range(n)]
    merges: list[tuple[int, int, float]] = []
    big = np.inf
    work = d2.copy()
    work[np.tril_indices(n)] = big
    for _ in range(n - k):
        flat = int(np.argmin(work))
        i, j = divmod(flat, n)
        dist = float(work[i, j])
        merges.append((i, j, dist))
        ni, nj = sizes[i], sizes[j]
        for v in np.nonzero(active)[0]:
            if v == i or v == j:
                continue
            nv = sizes[v]
            new = ((ni + nv) * d2[i, v] + (nj + nv) * d2[j, v] - nv * dist) / (
                ni + nj + nv
            )
            d2[i, v] = d2[v, i] = new
            lo, hi = (i, v) if i < v else (v, i)
            work[lo, hi] = new
        sizes[i] = ni + nj
        members[i].extend(members[j])
        active[j] = False
        work[j, :] = big
        work[:, j] = big
        d2[j, :] = big
        d2[:, j] = big
    clusters = sorted(np.nonzero(active)[0], key=lambda c: min(members[c]))
    assign = np.empty(n, dtype=int)
    for new_idx, c in enumerate(clusters):
        assign[members[c]] = new_idx
    centroids = np.stack([points[assign == j].mean(axis=0) for j in range(k)])
    return ClusterModel(
        method="ward", k=k, centroids=centroids, assignments=assign,
        within_ss=_within_ss(points, centroids, assign), seed=0,
        details={"merges": [(int(a), int(b), float(c)) for a, b, c in merges]},
    )


def _centroid_intensity(centroid: np.ndarray, basis: LatentBasis) -> np.ndarray:
    eta = basis.mean + centroid @ basis.eigenfunctions
    return np.exp(eta)


def _is_evergreen(curve: np.ndarray, rel_tol: float) -> bool:
    eps = rel_tol * float(curve.max())
    return bool(np.all(np.diff(curve) >= -eps))


def label_clusters(
    model: ClusterModel,
    basis: LatentBasis,
    thresholds: ShapeThresholds | None = None,
    centroids: np.ndarray | None = None,
) -> tuple[str, ...]:
    """Shape labels for each cluster centroid, applied in rule order.

    (1) evergreen when the centroid intensity never drops by more than the
    tolerance between consecutive years; (2) delayed when the peak year is
    past T/2; (3) otherwise normal, split into high/low by whether the
    curve's mean level exceeds the median of the normal clusters' means.
    Pass ``centroids`` to label in a different (e.g. unstandardized) score
    space than the one clustered in.
    """
    th = thresholds or ShapeThresholds()
    cents = model.centroids if centroids is None else np.asarray(centroids, float)
    if cents.shape[1] != basis.k:
        raise ConfigError(
            f"centroid dimension {cents.shape[1]} does not match basis K={basis.k}"
        )
    t = basis.grid.n_years
    curves = [_centroid_intensity(c, basis) for c in cents]
    labels: list[str | None] = [None] * len(curves)
    normal_means: list[tuple[int, float]] = []
    for idx, curve in enumerate(curves):
        if _is_evergreen(curve, th.evergreen_rel_tol):
            labels[idx] = "evergreen"
        elif float(basis.grid.points[int(np.argmax(curve))]) > th.delayed_frac * t:
            labels[idx] = "delayed"
        else:
            normal_means.append((idx, float(curve.mean())))
    if normal_means:
        med = float(np.median([m for _, m in normal_means]))
        for idx, m in normal_means:
            labels[idx] = "normal-high" if m > med else "normal-low"
    return tuple(labels)  # type: ignore[arg-type]


def classify_item(fit: TrajectoryFit, thresholds: ShapeThresholds | None = None) -> str:
    """Item-level taxonomy from the fitted intensity curve.

    Evergreen takes precedence, then flash-in-the-pan (early peak, endpoint
    below a fraction of the peak), then delayed document (late peak), else
    normal document.
    """
    th = thresholds or ShapeThresholds()
    curve = np.asarray(fit.intensity, dtype=float)
    t = len(curve)
    if _is_evergreen(curve, th.evergreen_rel_tol):
        return "evergreen"
    peak_year = int(np.argmax(curve)) + 1
    if peak_year <= th.flash_peak_frac * t and curve[-1] < th.flash_end_frac * curve.max():
        return "flash-in-the-pan"
    if peak_year > th.delayed_frac * t:
        return "delayed document"
    return "normal document"


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ConfigError("partitions must label the same items")
    n = len(a)
    if n == 0:
        raise ConfigError("empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def silhouette_mean(points, assignments) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Singleton clusters contribute 0 for their point; K=1 is undefined and
    raises.
    """
    points = np.asarray(points, dtype=float)
    assign = np.asarray(assignments)
    labels = np.unique(assign)
    if len(labels) < 2:
        raise ConfigError("silhouette needs at least 2 clusters")
    dists = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    n = len(points)
    scores = np.zeros(n)
    for i in range(n):
        own = assign[i]
        same = (assign == own) & (np.arange(n) != i)
        if not same.any():
            continue  # singleton: silhouette 0
        a = dists[i, same].mean()
        b = min(dists[i, assign == other].mean() for other in labels if other != own)
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


@dataclass(frozen=True)
class SweepReport:
    """Robustness sweep over (method, K) cells plus cross-method agreement."""

    report: dict
    models: dict

    def cell(self, method: str, k: int) -> ClusterModel:
        return self.models[(method, k)]


def robustness_sweep(
    points,
    k_values: Iterable[int],
    methods: Sequence[str],
    seed: int = 0,
    restarts: int = 10,
    basis: LatentBasis | None = None,
    thresholds: ShapeThresholds | None = None,
) -> SweepReport:
    """Run every (K, method) cell and summarize agreement between methods.

    Each cell reports within_ss, mean silhouette, cluster sizes, and (when a
    basis is supplied) shape labels; for each K the pairwise adjusted Rand
    index between methods quantifies robustness of the partition.
    """
    points = np.asarray(points, dtype=float)
    k_values = sorted(set(int(k) for k in k_values))
    known = {"kmeans", "kmedoids", "ward"}
    bad = [m for m in methods if m not in known]
    if bad:
        raise ConfigError(f"unknown clustering methods: {bad}")
    models: dict[tuple[str, int], ClusterModel] = {}
    cells: dict[str, dict[str, dict]] = {m: {} for m in methods}
    for method in methods:
        for k in k_values:
            if method == "kmeans":
                model = kmeans(points, k, seed=seed, restarts=restarts)
            elif method == "kmedoids":
                model = kmedoids(points, k, seed=seed)
            else:
                model = ward(points, k)
            if basis is not None:
                model = model.with_labels(label_clusters(model, basis, thresholds))
            models[(method, k)] = model
            sizes = np.bincount(model.assignments, minlength=k)
            cells[method][str(k)] = {
                "within_ss": model.within_ss,
                "silhouette": silhouette_mean(points, model.assignments)
                if k >= 2
                else None,
                "sizes": [int(s) for s in sizes],
                "labels": list(model.labels) if model.labels else None,
            }
    ari: dict[str, dict[str, float]] = {}
    for k in k_values:
        ari[str(k)] = {}
        for i, ma in enumerate(methods):
            for mb in methods[i + 1 :]:
                key = f"{ma}|{mb}"
                ari[str(k)][key] = adjusted_rand_index(
                    models[(ma, k)].assignments, models[(mb, k)].assignments
                )
    report = {
        "methods": list(methods),
        "k_values": k_values,
        "seed": seed,
        "cells": cells,
        "ari": ari,
    }
    return SweepReport(report=report, models=models)
