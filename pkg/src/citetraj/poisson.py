"""Per-item maximum likelihood for the functional Poisson regression model.

Each item's annual counts y_j are modeled as independent Poisson draws with
log intensity eta_j = mean_j + sum_k xi_k * phi_k(t_j).  The score vector xi
is a free per-item parameter estimated by Newton's method with step halving;
the log-likelihood is concave in xi, so a converged fit is the global
maximum.  The additive log y! constant is dropped throughout, so reported
log-likelihoods are comparable only within this package.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Corpus, CountTrajectory
from .errors import ConfigError, DataError, OverflowGuardError
from .fpca import LatentBasis

__all__ = [
    "FitOptions",
    "TrajectoryFit",
    "poisson_loglik",
    "loglik_grad_hess",
    "fit_scores",
    "fit_items",
    "fit_corpus",
    "fit_mse",
    "convergence_summary",
]

# exp() overflows double precision just above exp(709); guard a bit earlier.
ETA_OVERFLOW = 700.0

# Items are fit in fixed-size chunks so results are bitwise identical no
# matter how the corpus is split across workers.
_CHUNK = 256


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    max_halvings: int = 30
    ridge: float = 1e-6
    record_history: bool = False


@dataclass(frozen=True)
class TrajectoryFit:
    """One item's fitted scores, intensity curve, and fit diagnostics.

    ``converged`` means the (penalized, if ``ridged``) gradient dropped
    below the tolerance; ``ridged`` marks fits that needed the ridge
    fallback after tripping the overflow guard or a singular Hessian.
    ``loglik`` is always the unpenalized Poisson log-likelihood.
    """

    id: str
    scores: np.ndarray
    eta: np.ndarray
    intensity: np.ndarray
    loglik: float
    mse: float
    iterations: int
    converged: bool
    ridged: bool = False
    history: tuple[float, ...] | None = None


def poisson_loglik(counts, eta) -> float:
    """Poisson log-likelihood sum_j (y_j * eta_j - exp(eta_j)), no log y! term."""
    counts = np.asarray(counts, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if counts.shape != eta.shape:
        raise ConfigError("counts and eta must have equal length")
    if eta.size and float(eta.max()) > ETA_OVERFLOW:
        raise OverflowGuardError(
            f"eta exceeds the overflow guard ({float(eta.max()):.1f} > {ETA_OVERFLOW})"
        )
    return float(np.sum(counts * eta - np.exp(eta)))


def loglik_grad_hess(counts, eta, basis: LatentBasis):
    """Gradient and Hessian of the log-likelihood with respect to the scores.

    g_k = sum_j (y_j - exp(eta_j)) phi_k(t_j)
    H_kl = -sum_j exp(eta_j) phi_k(t_j) phi_l(t_j)
    """
    counts = np.asarray(counts, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if eta.size and float(eta.max()) > ETA_OVERFLOW:
        raise OverflowGuardError(
            f"eta exceeds the overflow guard ({float(eta.max()):.1f} > {ETA_OVERFLOW})"
        )
    phi = basis.eigenfunctions
    lam = np.exp(eta)
    grad = phi @ (counts - lam)
    hess = -(phi * lam[None, :]) @ phi.T
    return grad, hess


def _batch_loglik(y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Row-wise log-likelihood; overflowing rows yield -inf instead of raising."""
    with np.errstate(over="ignore", invalid="ignore"):
        lam = np.exp(eta)
        ll = np.sum(y * eta - lam, axis=1)
    ll[~np.isfinite(ll)] = -np.inf
    return ll


def _newton_batch(y, mu, phi, opts: FitOptions, ridge: float, s0):
    """Newton-with-step-halving over a batch of items sharing one basis.

    Every reduction runs per item (einsum with fixed loop order), so an
    item's result does not depend on which batch it was computed in.
    Accepted iterates always have finite, increasing objective, so only the
    starting point can sit beyond the overflow guard; such items are flagged
    for the ridge fallback instead of raising.
    Returns (scores, loglik, iterations, converged, needs_fallback).
    """
    m, t = y.shape
    k = phi.shape[0]
    s = s0.copy()
    iters = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    fallback = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    history: list[list[float]] | None = (
        [[] for _ in range(m)] if opts.record_history else None
    )

    def eta_of(scores):
        return mu[None, :] + np.einsum("ik,kt->it", scores, phi)

    if history is not None:
        ll0 = _batch_loglik(y, eta_of(s))
        if ridge:
            ll0 = ll0 - 0.5 * ridge * np.sum(s * s, axis=1)
        for i in range(m):
            history[i].append(float(ll0[i]))

    for _ in range(opts.max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        sa = s[idx]
        eta = eta_of(sa)
        over = eta.max(axis=1) > ETA_OVERFLOW
        if over.any():
            fallback[idx[over]] = True
            active[idx[over]] = False
            idx = idx[~over]
            if idx.size == 0:
                continue
            sa = s[idx]
            eta = eta[~over]
        lam = np.exp(eta)
        ya = y[idx]
        grad = np.einsum("it,kt->ik", ya - lam, phi)
        if ridge:
            grad = grad - ridge * sa
        gnorm = np.abs(grad).max(axis=1) if k else np.zeros(len(idx))
        done = gnorm < opts.grad_tol
        if done.any():
            converged[idx[done]] = True
            active[idx[done]] = False
            keep = ~done
            idx, sa, eta, lam, ya, grad = (
                idx[keep], sa[keep], eta[keep], lam[keep], ya[keep], grad[keep],
            )
            if idx.size == 0:
                continue
        neg_hess = np.einsum("it,kt,lt->ikl", lam, phi, phi)
        if ridge:
            neg_hess = neg_hess + ridge * np.eye(k)[None, :, :]
        try:
            direction = np.linalg.solve(neg_hess, grad[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            direction = np.empty_like(grad)
            for row in range(len(idx)):
                try:
                    direction[row] = np.linalg.solve(neg_hess[row], grad[row])
                except np.linalg.LinAlgError:
                    direction[row] = np.nan
            bad = ~np.isfinite(direction).all(axis=1)
            fallback[idx[bad]] = True
            active[idx[bad]] = False
            keep = ~bad
            idx, sa, ya, grad, direction = (
                idx[keep], sa[keep], ya[keep], grad[keep], direction[keep],
            )
            if idx.size == 0:
                continue
            eta = eta_of(sa)
            lam = np.exp(eta)
        ll = np.sum(ya * eta - lam, axis=1)
        if ridge:
            ll = ll - 0.5 * ridge * np.sum(sa * sa, axis=1)

        alpha = np.ones(len(idx))
        improved = np.zeros(len(idx), dtype=bool)
        new_s = sa.copy()
        new_ll = ll.copy()
        for _halving in range(opts.max_halvings + 1):
            todo = ~improved
            if not todo.any():
                break
            trial = sa[todo] + alpha[todo, None] * direction[todo]
            trial_ll = _batch_loglik(ya[todo], eta_of(trial))
            if ridge:
                trial_ll = trial_ll - 0.5 * ridge * np.sum(trial * trial, axis=1)
            if _halving == 0:
                # Right at the optimum the objective is float-flat: the full
                # Newton step can read as a few ulps "worse" although the
                # gradient still contracts quadratically.  Accept it within
                # an ulp-scaled tolerance; halved steps must make strict
                # progress.
                tol = 1e-13 * np.maximum(1.0, np.abs(ll[todo]))
                better = trial_ll >= ll[todo] - tol
            else:
                better = trial_ll > ll[todo]
            where = np.nonzero(todo)[0][better]
            new_s[where] = trial[better]
            new_ll[where] = trial_ll[better]
            improved[where] = True
            alpha[~improved] *= 0.5

        iters[idx[improved]] += 1
        if history is not None:
            for row in np.nonzero(improved)[0]:
                history[idx[row]].append(float(new_ll[row]))
        # Stalled items cannot improve the objective; stop them unconverged.
        stalled = ~improved
        active[idx[stalled]] = False
        step = np.abs(new_s - sa).max(axis=1) if k else np.zeros(len(idx))
        s[idx] = new_s
        tiny = improved & (step < opts.step_tol)
        if tiny.any():
            # Final gradient check so the converged flag keeps its meaning.
            eta_t = eta_of(new_s[tiny])
            lam_t = np.exp(eta_t)
            g_t = np.einsum("it,kt->ik", y[idx[tiny]] - lam_t, phi)
            if ridge:
                g_t = g_t - ridge * new_s[tiny]
            converged[idx[tiny]] = np.abs(g_t).max(axis=1) < opts.grad_tol
            active[idx[tiny]] = False

    # Reported log-likelihood is always unpenalized, even for ridged fits.
    ll = _batch_loglik(y, eta_of(s))
    return s, ll, iters, converged, fallback, history


def _fit_batch(
    y: np.ndarray,
    ids: Sequence[str],
    basis: LatentBasis,
    opts: FitOptions,
) -> list[TrajectoryFit]:
    mu = basis.mean
    phi = basis.eigenfunctions
    delta = basis.grid.delta
    m, t = y.shape
    k = basis.k
    if k == 0:
        eta = np.broadcast_to(mu, (m, t))
        lam = np.exp(eta)
        ll = np.sum(y * eta - lam, axis=1)
        mse = np.mean((y - lam) ** 2, axis=1)
        return [
            TrajectoryFit(
                id=ids[i], scores=np.zeros(0), eta=mu.copy(), intensity=np.exp(mu),
                loglik=float(ll[i]), mse=float(mse[i]), iterations=0,
                converged=True, ridged=False,
            )
            for i in range(m)
        ]
    z = np.log1p(y)
    s0 = np.einsum("it,kt->ik", z - mu[None, :], phi) * delta
    s, ll, iters, conv, fallback, history = _newton_batch(y, mu, phi, opts, 0.0, s0)
    if fallback.any():
        # Ridge fallback restarts the flagged items from zero scores, which
        # keeps the initial linear predictor at the (safe) mean curve.
        idx = np.nonzero(fallback)[0]
        s2, ll2, it2, conv2, _, hist2 = _newton_batch(
            y[idx], mu, phi, opts, opts.ridge, np.zeros((idx.size, k))
        )
        s[idx], ll[idx], conv[idx] = s2, ll2, conv2
        iters[idx] += it2
        if history is not None and hist2 is not None:
            for j, i in enumerate(idx):
                history[i] = hist2[j]
    out = []
    for i in range(m):
        eta = mu + s[i] @ phi
        lam = np.exp(eta)
        mse = float(np.mean((y[i] - lam) ** 2))
        out.append(
            TrajectoryFit(
                id=ids[i], scores=s[i].copy(), eta=eta, intensity=lam,
                loglik=float(ll[i]), mse=mse, iterations=int(iters[i]),
                converged=bool(conv[i]), ridged=bool(fallback[i]),
                history=tuple(history[i]) if history is not None else None,
            )
        )
    return out


def fit_scores(
    traj: CountTrajectory, basis: LatentBasis, options: FitOptions | None = None
) -> TrajectoryFit:
    """Maximum likelihood scores for a single trajectory.

    Newton's method with step halving, initialized at the projection of the
    log-transformed deviation onto the basis.  Convergence when the max
    absolute gradient drops below 1e-8 (or the step shrinks below 1e-10 and
    the final gradient check passes); 100 iterations otherwise, flagged.
    """
    if len(traj.counts) != basis.grid.n_years:
        raise DataError(
            f"item {traj.id!r} has {len(traj.counts)} counts, basis grid has "
            f"{basis.grid.n_years}"
        )
    opts = options or FitOptions()
    y = np.asarray([traj.counts], dtype=float)
    return _fit_batch(y, [traj.id], basis, opts)[0]


def fit_items(
    items: Sequence[CountTrajectory],
    basis: LatentBasis,
    options: FitOptions | None = None,
) -> list[TrajectoryFit]:
    """Fit a list of trajectories in fixed-size chunks (deterministic)."""
    opts = options or FitOptions()
    out: list[TrajectoryFit] = []
    for lo in range(0, len(items), _CHUNK):
        chunk = items[lo : lo + _CHUNK]
        y = np.asarray([it.counts for it in chunk], dtype=float)
        out.extend(_fit_batch(y, [it.id for it in chunk], basis, opts))
    return out


def fit_corpus(
    corpus: Corpus,
    basis: LatentBasis,
    options: FitOptions | None = None,
    jobs: int = 1,
) -> list[TrajectoryFit]:
    """Independent per-item fits for a whole corpus, in corpus order.

    Items are processed in fixed-size chunks; with ``jobs > 1`` the chunks
    run on a thread pool.  Chunk boundaries are identical either way, so the
    result is bitwise independent of the schedule.
    """
    if corpus.grid.n_years != basis.grid.n_years:
        raise DataError("corpus and basis grids disagree")
    opts = options or FitOptions()
    chunks = [corpus.items[lo : lo + _CHUNK] for lo in range(0, len(corpus), _CHUNK)]

    def run(chunk):
        y = np.asarray([it.counts for it in chunk], dtype=float)
        return _fit_batch(y, [it.id for it in chunk], basis, opts)

    out: list[TrajectoryFit] = []
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for fits in pool.map(run, chunks):
                out.extend(fits)
    else:
        for chunk in chunks:
            out.extend(run(chunk))
    return out


def fit_mse(traj: CountTrajectory, fit: TrajectoryFit) -> float:
    """Mean squared error between observed counts and fitted intensity."""
    y = np.asarray(traj.counts, dtype=float)
    if y.shape != fit.intensity.shape:
        raise DataError("trajectory and fit are on different grids")
    return float(np.mean((y - fit.intensity) ** 2))


def convergence_summary(fits: Sequence[TrajectoryFit]) -> dict:
    n = len(fits)
    converged = sum(f.converged for f in fits)
    return {
        "n_items": n,
        "n_converged": converged,
        "n_ridged": sum(f.ridged for f in fits),
        "convergence_rate": (converged / n) if n else 1.0,
        "max_iterations": max((f.iterations for f in fits), default=0),
    }
