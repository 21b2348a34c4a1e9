"""Mean, covariance, and orthonormal eigenbasis of log count curves.

The latent log-intensity process is summarized by a smooth mean curve plus
orthonormal eigenfunctions of the sample covariance of z = ln(count + 1).
Downstream, per-item coordinates along this basis are refit by Poisson
maximum likelihood, so the basis only has to capture the curve geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Corpus, TimeGrid, log_matrix
from .errors import ConfigError, DataError, NumericalError
from .smoothing import (
    DEFAULT_BANDWIDTH_CANDIDATES,
    SmoothCurve,
    gcv_bandwidth,
    local_poly_smooth,
)

__all__ = [
    "BandwidthPolicy",
    "BasisPolicy",
    "LatentBasis",
    "SelectionRow",
    "SelectionTable",
    "estimate_mean",
    "covariance_matrix",
    "eigendecompose_symmetric",
    "truncate_basis",
    "select_k_loglik",
]

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class BandwidthPolicy:
    """Either GCV over a candidate grid or a fixed bandwidth (years)."""

    kind: str = "gcv"
    value: float | None = None
    candidates: tuple[float, ...] = DEFAULT_BANDWIDTH_CANDIDATES

    def __post_init__(self):
        if self.kind not in ("gcv", "fixed"):
            raise ConfigError(f"unknown bandwidth policy {self.kind!r}")
        if self.kind == "fixed" and (self.value is None or self.value <= 0):
            raise ConfigError("fixed bandwidth policy needs a positive value")


@dataclass(frozen=True)
class BasisPolicy:
    """How many eigenfunctions to retain: fixed count or FVE threshold."""

    kind: str = "fixed"
    k: int = 4
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "fve"):
            raise ConfigError(f"unknown basis policy {self.kind!r}")
        if self.kind == "fixed" and self.k < 0:
            raise ConfigError(f"fixed basis size must be >= 0, got {self.k}")
        if self.kind == "fve" and not (self.tau is not None and 0 < self.tau <= 1):
            raise ConfigError("fve policy needs tau in (0, 1]")


@dataclass(frozen=True)
class LatentBasis:
    """Smoothed mean curve plus K orthonormal eigenfunctions on the grid.

    Eigenfunctions are rows of shape (K, T), normalized so that
    sum_j phi_k(t_j)^2 * delta = 1, with eigenvalues sorted descending and
    clamped at zero.  ``fve`` is the cumulative fraction of variance
    explained relative to the full positive spectrum the basis was cut from.
    """

    grid: TimeGrid
    mean: np.ndarray
    mean_derivative: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    fve: np.ndarray
    mean_bandwidth: float = 1.0

    def __post_init__(self):
        t = self.grid.n_years
        mean = np.asarray(self.mean, dtype=float)
        deriv = np.asarray(self.mean_derivative, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float)
        phi = np.asarray(self.eigenfunctions, dtype=float).reshape(-1, t)
        fve = np.asarray(self.fve, dtype=float)
        if mean.shape != (t,) or deriv.shape != (t,):
            raise DataError("mean curve length must match the grid")
        if phi.shape[0] != lam.shape[0] or fve.shape != lam.shape:
            raise DataError("eigenvalues, eigenfunctions, and fve sizes disagree")
        if np.any(lam < 0):
            raise DataError("eigenvalues must be clamped at zero")
        if np.any(np.diff(lam) > 1e-12):
            raise DataError("eigenvalues must be sorted descending")
        if np.any(np.diff(fve) < -1e-12):
            raise DataError("fve must be nondecreasing")
        delta = self.grid.delta
        gram = phi @ phi.T * delta
        if phi.shape[0] and np.max(np.abs(gram - np.eye(phi.shape[0]))) > _ORTHO_TOL:
            raise NumericalError("eigenfunctions are not orthonormal on the grid")
        for name, arr in (("mean", mean), ("mean_derivative", deriv),
                          ("eigenvalues", lam), ("eigenfunctions", phi), ("fve", fve)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return int(self.eigenvalues.shape[0])

    def truncated(self, k: int) -> "LatentBasis":
        """Sub-basis keeping the first ``k`` eigenfunctions (nested)."""
        if not 0 <= k <= self.k:
            raise ConfigError(f"cannot truncate basis of size {self.k} to {k}")
        return LatentBasis(
            grid=self.grid,
            mean=self.mean,
            mean_derivative=self.mean_derivative,
            eigenvalues=self.eigenvalues[:k].copy(),
            eigenfunctions=self.eigenfunctions[:k].copy(),
            fve=self.fve[:k].copy(),
            mean_bandwidth=self.mean_bandwidth,
        )


def estimate_mean(corpus: Corpus, bandwidth: BandwidthPolicy | None = None) -> SmoothCurve:
    """Smooth the cross-sectional average of ln(count + 1) curves.

    The raw yearly average is smoothed by a local quadratic so the curve's
    derivative comes from the fitted slope rather than finite differences.
    """
    if len(corpus) == 0:
        raise DataError("cannot estimate a mean curve from an empty corpus")
    policy = bandwidth or BandwidthPolicy()
    t = corpus.grid.points
    zbar = log_matrix(corpus).mean(axis=0)
    if policy.kind == "fixed":
        h = float(policy.value)
    else:
        h = gcv_bandwidth(t, zbar, degree=2, candidates=policy.candidates)
    values, deriv = local_poly_smooth(t, zbar, degree=2, bandwidth=h, eval_points=t)
    return SmoothCurve(grid=corpus.grid, values=values, derivative=deriv, bandwidth=h)


def covariance_matrix(corpus: Corpus, mean) -> np.ndarray:
    """Sample covariance of the log curves around the given mean curve.

    C(t_j, t_l) = sum_i (z_ij - mean_j)(z_il - mean_l) / (n - 1), exactly
    symmetrized to absorb BLAS rounding.
    """
    n = len(corpus)
    if n < 2:
        raise DataError(f"covariance needs at least 2 items, got {n}")
    mean = np.asarray(mean, dtype=float)
    centered = log_matrix(corpus) - mean[None, :]
    raw = centered.T @ centered / (n - 1)
    return 0.5 * (raw + raw.T)


def eigendecompose_symmetric(cov: np.ndarray, delta: float = 1.0):
    """Eigenpairs of the quadrature-weighted covariance operator.

    Solves (C * delta) v = lambda v with a symmetric solver, rescales the
    eigenvectors by 1/sqrt(delta) so sum_j phi^2 * delta = 1, and fixes the
    sign so each eigenfunction has nonnegative grid sum (first nonzero
    coordinate positive on an exact tie).  Returns the full spectrum sorted
    descending: (eigenvalues (T,), eigenfunctions (T, T) as rows).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DataError(f"covariance must be square, got shape {cov.shape}")
    asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    if asym > 1e-10:
        raise NumericalError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    if delta <= 0:
        raise ConfigError(f"quadrature weight delta must be positive, got {delta}")
    try:
        w, v = np.linalg.eigh(cov * delta)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from exc
    # eigh returns ascending order; reverse for descending eigenvalues.
    eigenvalues = w[::-1].copy()
    phi = (v[:, ::-1].T / np.sqrt(delta)).copy()
    for k in range(phi.shape[0]):
        s = phi[k].sum()
        if s < 0:
            phi[k] = -phi[k]
        elif s == 0:
            nz = np.nonzero(phi[k])[0]
            if nz.size and phi[k, nz[0]] < 0:
                phi[k] = -phi[k]
    return eigenvalues, phi


def truncate_basis(
    mean: SmoothCurve,
    eigenvalues: np.ndarray,
    eigenfunctions: np.ndarray,
    policy: BasisPolicy | None = None,
) -> LatentBasis:
    """Cut the full spectrum down to a working basis.

    The FVE policy keeps the smallest K whose cumulative share of the
    positive spectrum reaches tau; the fixed policy keeps exactly K.
    Negative sample eigenvalues are clamped to zero and excluded from the
    FVE denominator.
    """
    policy = policy or BasisPolicy()
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    eigenfunctions = np.asarray(eigenfunctions, dtype=float)
    clamped = np.maximum(eigenvalues, 0.0)
    positive = int(np.count_nonzero(clamped > 0))
    total = float(clamped.sum())
    if policy.kind == "fixed":
        k = policy.k
        if k > positive:
            raise ConfigError(
                f"requested {k} eigenfunctions but only {positive} positive "
                "eigenvalues are available"
            )
    else:
        if positive == 0:
            raise ConfigError("no positive eigenvalues; cannot apply an FVE policy")
        share = np.cumsum(clamped[:positive]) / total
        k = int(np.searchsorted(share, policy.tau - 1e-12) + 1)
        k = min(k, positive)
    fve = (np.cumsum(clamped[:k]) / total) if total > 0 else np.zeros(k)
    return LatentBasis(
        grid=mean.grid,
        mean=np.asarray(mean.values, dtype=float).copy(),
        mean_derivative=np.asarray(mean.derivative, dtype=float).copy(),
        eigenvalues=clamped[:k].copy(),
        eigenfunctions=eigenfunctions[:k].copy(),
        fve=fve,
        mean_bandwidth=mean.bandwidth,
    )


@dataclass(frozen=True)
class SelectionRow:
    k: int
    mean_loglik: float
    aic: float
    n_excluded: int


@dataclass(frozen=True)
class SelectionTable:
    rows: tuple[SelectionRow, ...]

    @property
    def recommended_k(self) -> int:
        best = min(row.aic for row in self.rows)
        for row in self.rows:  # rows sorted by k; ties resolve to smaller k
            if row.aic <= best:
                return row.k
        raise AssertionError("unreachable")


def select_k_loglik(
    corpus: Corpus,
    basis: LatentBasis,
    k_range: Iterable[int],
    folds: int = 5,
) -> SelectionTable:
    """Score nested basis sizes by held-out per-item Poisson log-likelihood.

    Items are split round-robin into ``folds`` folds; each fold's items are
    fit (scores only) while held out and contribute their own log-likelihood.
    Because scores are free per-item parameters, an item's held-out fit
    coincides with its in-sample fit; the fold machinery fixes the batching.
    AIC = -2 * (mean log-likelihood) + 2K, recommended K = argmin AIC with
    ties resolved to the smaller K.  Items whose fit diverges are excluded
    from the average and counted per row.
    """
    from . import poisson  # local import: poisson depends on this module

    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ConfigError("empty K range")
    if ks[0] < 0 or ks[-1] > basis.k:
        raise ConfigError(
            f"K range {ks} outside available eigenfunctions [0, {basis.k}]"
        )
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    if len(corpus) == 0:
        raise DataError("cannot select K on an empty corpus")
    n = len(corpus)
    fold_of = np.arange(n) % folds
    rows = []
    for k in ks:
        sub = basis.truncated(k)
        loglik = np.full(n, np.nan)
        converged = np.zeros(n, dtype=bool)
        for fold in range(folds):
            held_out = np.nonzero(fold_of == fold)[0]
            if held_out.size == 0:
                continue
            fits = poisson.fit_items(
                [corpus.items[i] for i in held_out], sub
            )
            for idx, fit in zip(held_out, fits):
                loglik[idx] = fit.loglik
                converged[idx] = fit.converged
        included = converged & np.isfinite(loglik)
        n_excluded = int(n - included.sum())
        if not included.any():
            raise NumericalError(f"every item diverged at K={k}")
        mean_ll = float(loglik[included].mean())
        rows.append(
            SelectionRow(k=k, mean_loglik=mean_ll, aic=-2.0 * mean_ll + 2.0 * k,
                         n_excluded=n_excluded)
        )
    return SelectionTable(rows=tuple(rows))
