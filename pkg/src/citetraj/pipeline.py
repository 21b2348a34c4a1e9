"""End-to-end orchestration: ingest, basis, fits, baseline, clusters, labels.

The single artifact is the model file: a self-contained JSON document from
which every plot and table can be regenerated without recomputation.  The
file carries a schema version and a sha256 checksum over its canonical
payload (timestamp excluded), so equal inputs, config, and seed produce a
byte-identical model up to the timestamp field.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from . import clustering as clus
from . import fpca, poisson, wsb
from .data import Corpus, CountTrajectory, TimeGrid, counts_matrix, filter_by_total, parse_corpus
from .errors import ConfigError, DataError, NumericalError, StageError
from .smoothing import SmoothCurve

__all__ = [
    "PipelineConfig",
    "ModelFile",
    "SCHEMA_VERSION",
    "run_pipeline",
    "sensitivity",
    "save_model",
    "load_model",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    """Echoed verbatim into the model file; flags > config file > defaults."""

    input: str | None = None
    format: str | None = None
    output_dir: str = "out"
    seed: int = 0
    k_basis: int = 4
    fve: float | None = None
    k_clusters: int = 4
    method: str = "kmeans"
    restarts: int = 10
    min_total: int = 0
    m_wsb: float = 30.0
    standardize: bool = False
    eval_grid: int = 256
    jobs: int = 1
    baseline: bool = True
    select_k_max: int = 6
    folds: int = 5
    bandwidth: float | None = None
    evergreen_tol: float = 0.05

    def __post_init__(self):
        if self.method not in ("kmeans", "kmedoids", "ward"):
            raise ConfigError(f"unknown clustering method {self.method!r}")
        if self.k_basis < 0:
            raise ConfigError("k-basis must be >= 0")
        if self.k_clusters < 1:
            raise ConfigError("k-clusters must be >= 1")
        if self.fve is not None and not 0 < self.fve <= 1:
            raise ConfigError("fve must be in (0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.eval_grid < 8:
            raise ConfigError("eval-grid must be >= 8")


@dataclass
class ModelFile:
    """Dict-backed model document; see ``save_model`` for the disk format."""

    data: dict

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(int(self.data["grid"]["n_years"]))

    def corpus(self) -> Corpus:
        c = self.data["corpus"]
        items = tuple(
            CountTrajectory(i, tuple(int(x) for x in row))
            for i, row in zip(c["ids"], c["counts"])
        )
        return Corpus(self.grid, items, c.get("provenance", ""))

    def basis(self) -> fpca.LatentBasis:
        b = self.data["basis"]
        m = self.data["mean"]
        return fpca.LatentBasis(
            grid=self.grid,
            mean=np.asarray(m["values"], dtype=float),
            mean_derivative=np.asarray(m["derivative"], dtype=float),
            eigenvalues=np.asarray(b["eigenvalues"], dtype=float),
            eigenfunctions=np.asarray(b["eigenfunctions"], dtype=float).reshape(
                len(b["eigenvalues"]), -1
            )
            if b["eigenvalues"]
            else np.zeros((0, self.grid.n_years)),
            fve=np.asarray(b["fve"], dtype=float),
            mean_bandwidth=float(m["bandwidth"]),
        )

    def scores(self) -> np.ndarray:
        return np.asarray(self.data["fits"]["scores"], dtype=float).reshape(
            len(self.data["corpus"]["ids"]), -1
        )

    def intensities(self) -> np.ndarray:
        basis = self.basis()
        s = self.scores()
        eta = basis.mean[None, :] + (
            s @ basis.eigenfunctions if basis.k else np.zeros((len(s), basis.grid.n_years))
        )
        return np.exp(eta)

    def cluster_entry(self, method: str | None = None, k: int | None = None) -> dict:
        clusters = self.data.get("clusters") or {}
        method = method or self.data["config"].get("method", "kmeans")
        k = k if k is not None else self.data["config"].get("k_clusters", 4)
        try:
            return clusters[method][str(k)]
        except KeyError:
            raise DataError(f"model has no clustering for ({method}, K={k})") from None


def _canonical_bytes(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _checksum(data: dict) -> str:
    body = {k: v for k, v in data.items() if k not in ("checksum", "created_at")}
    return hashlib.sha256(_canonical_bytes(body)).hexdigest()


def save_model(model: ModelFile, path) -> None:
    """Write the model as canonical JSON with an embedded checksum.

    Floats serialize via shortest round-trip repr, so save -> load -> save
    is byte-identical (the stored timestamp is preserved as-is).
    """
    data = dict(model.data)
    data["schema_version"] = SCHEMA_VERSION
    data.setdefault("created_at", _now())
    data["checksum"] = _checksum(data)
    with open(path, "wb") as fh:
        fh.write(_canonical_bytes(data))
        fh.write(b"\n")


def load_model(path) -> ModelFile:
    """Read and verify a model file (schema version, then checksum)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(data, dict) or "schema_version" not in data:
        raise DataError(f"corrupt model file {path}: missing schema_version")
    if data["schema_version"] != SCHEMA_VERSION:
        raise DataError(
            f"model schema version {data['schema_version']} unsupported "
            f"(expected {SCHEMA_VERSION})"
        )
    stored = data.get("checksum")
    if stored != _checksum(data):
        raise DataError(f"checksum mismatch in {path}: file is corrupt or edited")
    return ModelFile(data)


def model_fingerprint(model: ModelFile) -> str:
    """Checksum of the model content, timestamp excluded."""
    return _checksum(model.data)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _floats(arr) -> list:
    return [float(x) for x in arr]


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def _detect_format(path: str, override: str | None) -> str:
    if override:
        return override
    if str(path).endswith(".jsonl"):
        return "jsonl"
    return "csv"


def _cluster_points(scores: np.ndarray, basis: fpca.LatentBasis, standardize: bool):
    if not standardize:
        return scores
    lam = basis.eigenvalues
    if np.any(lam <= 0):
        raise NumericalError("cannot standardize: basis has zero eigenvalues")
    return scores / np.sqrt(lam)[None, :]


def _run_cluster_method(method: str, points, k, seed, restarts):
    if method == "kmeans":
        return clus.kmeans(points, k, seed=seed, restarts=restarts)
    if method == "kmedoids":
        return clus.kmedoids(points, k, seed=seed)
    return clus.ward(points, k)


def _raw_centroids(scores: np.ndarray, assignments: np.ndarray, k: int,
                   fallback: np.ndarray) -> np.ndarray:
    """Cluster means in raw score space; empty clusters fall back."""
    cents = []
    for j in range(k):
        members = scores[assignments == j]
        cents.append(members.mean(axis=0) if len(members) else fallback[j])
    return np.stack(cents)


def _cluster_payload(model: clus.ClusterModel, labels) -> dict:
    return {
        "centroids": [_floats(c) for c in model.centroids],
        "assignments": [int(a) for a in model.assignments],
        "within_ss": float(model.within_ss),
        "seed": int(model.seed),
        "method": model.method,
        "labels": list(labels) if labels is not None else None,
    }


def run_pipeline(config: PipelineConfig, corpus: Corpus | None = None) -> ModelFile:
    """Execute the full pipeline and return the assembled model.

    Stage order: ingest, filter, mean, covariance/eigenbasis, basis size
    selection table, per-item Poisson fits, WSB baseline plus comparison
    (unless disabled), clustering, labels.  Stage failures surface as
    :class:`StageError` naming the stage.
    """
    with _stage("ingest"):
        if corpus is None:
            if not config.input:
                raise ConfigError("no corpus given: set input path")
            corpus = parse_corpus(
                config.input, _detect_format(config.input, config.format)
            )
    with _stage("filter"):
        result = filter_by_total(corpus, config.min_total)
        corpus = result.corpus
        if len(corpus) < 2:
            raise DataError(
                f"only {len(corpus)} items left after min_total={config.min_total}"
            )
    with _stage("mean"):
        policy = (
            fpca.BandwidthPolicy("fixed", value=config.bandwidth)
            if config.bandwidth
            else fpca.BandwidthPolicy()
        )
        mean = fpca.estimate_mean(corpus, policy)
    with _stage("eigenbasis"):
        cov = fpca.covariance_matrix(corpus, mean.values)
        spectrum, functions = fpca.eigendecompose_symmetric(cov, corpus.grid.delta)
        n_positive = int(np.count_nonzero(np.maximum(spectrum, 0.0) > 0))
        if config.fve is not None:
            basis = fpca.truncate_basis(
                mean, spectrum, functions, fpca.BasisPolicy("fve", tau=config.fve)
            )
        else:
            basis = fpca.truncate_basis(
                mean, spectrum, functions, fpca.BasisPolicy("fixed", k=config.k_basis)
            )
    with _stage("selection"):
        selection = None
        k_top = min(config.select_k_max, n_positive)
        if k_top >= 1:
            sel_basis = fpca.truncate_basis(
                mean, spectrum, functions, fpca.BasisPolicy("fixed", k=k_top)
            )
            table = fpca.select_k_loglik(
                corpus, sel_basis, range(1, k_top + 1), folds=config.folds
            )
            selection = {
                "rows": [asdict(r) for r in table.rows],
                "recommended_k": table.recommended_k,
            }
    with _stage("fit"):
        fits = poisson.fit_corpus(corpus, basis, jobs=config.jobs)
        fit_summary = poisson.convergence_summary(fits)
    wsb_block = None
    comparison = None
    if config.baseline:
        with _stage("baseline"):
            wsb_fits = wsb.fit_wsb_corpus(corpus.items, m=config.m_wsb, jobs=config.jobs)
            wsb_block = {
                "m": float(config.m_wsb),
                "lam": [float(f.params.lam) for f in wsb_fits],
                "mu": [float(f.params.mu) for f in wsb_fits],
                "sigma": [float(f.params.sigma) for f in wsb_fits],
                "mse": [float(f.mse) for f in wsb_fits],
                "converged": [bool(f.converged) for f in wsb_fits],
                "objective": [
                    float(f.objective) if np.isfinite(f.objective) else None
                    for f in wsb_fits
                ],
            }
            table = wsb.compare_models(fits, wsb_fits, eval_points=config.eval_grid)
            comparison = {
                "log10_mse_wsb": _floats(table.log10_mse_wsb),
                "log10_mse_fpca": _floats(table.log10_mse_fpca),
                "kde_eval": _floats(table.kde_wsb.eval_points),
                "kde_wsb": _floats(table.kde_wsb.densities),
                "kde_fpca": _floats(table.kde_fpca.densities),
                "kde_bandwidth": float(table.kde_wsb.bandwidth),
            }
    clusters: dict = {}
    cluster_refusal = None
    item_labels = None
    thresholds_cfg = clus.ShapeThresholds(evergreen_rel_tol=config.evergreen_tol)
    with _stage("cluster"):
        scores = np.asarray([f.scores for f in fits], dtype=float).reshape(
            len(fits), basis.k
        )
        if basis.k < 1:
            cluster_refusal = (
                "clustering refused: zero-dimensional scores (k-basis is 0)"
            )
        elif len(corpus) < config.k_clusters:
            cluster_refusal = (
                f"clustering refused: {len(corpus)} items cannot form "
                f"{config.k_clusters} clusters"
            )
        else:
            points = _cluster_points(scores, basis, config.standardize)
            model = _run_cluster_method(
                config.method, points, config.k_clusters, config.seed, config.restarts
            )
            fallback = model.centroids * (
                np.sqrt(basis.eigenvalues)[None, :] if config.standardize else 1.0
            )
            raw_centroids = _raw_centroids(
                scores, model.assignments, config.k_clusters, fallback
            )
            labels = clus.label_clusters(
                model, basis, thresholds_cfg, centroids=raw_centroids
            )
            clusters = {config.method: {str(config.k_clusters): _cluster_payload(model, labels)}}
    with _stage("label"):
        if basis.k >= 1:
            item_labels = [clus.classify_item(f, thresholds_cfg) for f in fits]
    config_echo = asdict(config)
    # Execution knobs that cannot change model content stay out of the
    # persisted echo, keeping equal-config runs byte-identical across
    # serial and parallel execution.
    config_echo.pop("jobs")
    config_echo.pop("output_dir")
    data = {
        "schema_version": SCHEMA_VERSION,
        "created_at": _now(),
        "config": config_echo,
        "grid": {"n_years": corpus.grid.n_years},
        "corpus": {
            "ids": list(corpus.ids),
            "counts": [list(map(int, it.counts)) for it in corpus.items],
            "provenance": corpus.provenance,
        },
        "filter": {
            "min_total": config.min_total,
            "kept": result.kept,
            "dropped": result.dropped,
        },
        "mean": {
            "values": _floats(mean.values),
            "derivative": _floats(mean.derivative),
            "bandwidth": float(mean.bandwidth),
        },
        "spectrum": _floats(spectrum),
        "basis": {
            "k": basis.k,
            "eigenvalues": _floats(basis.eigenvalues),
            "eigenfunctions": [_floats(row) for row in basis.eigenfunctions],
            "fve": _floats(basis.fve),
        },
        "selection": selection,
        "fits": {
            "scores": [_floats(f.scores) for f in fits],
            "loglik": [float(f.loglik) for f in fits],
            "mse": [float(f.mse) for f in fits],
            "iterations": [int(f.iterations) for f in fits],
            "converged": [bool(f.converged) for f in fits],
            "ridged": [bool(f.ridged) for f in fits],
        },
        "fit_summary": fit_summary,
        "wsb": wsb_block,
        "comparison": comparison,
        "clusters": clusters,
        "cluster_refusal": cluster_refusal,
        "item_labels": item_labels,
        "robustness": None,
        "thresholds": None,
    }
    data["checksum"] = _checksum(data)
    return ModelFile(data)


def _evergreen_items(assignments: np.ndarray, labels: Sequence[str], ids) -> set:
    ever = {j for j, lab in enumerate(labels) if lab == "evergreen"}
    return {i for i, a in zip(ids, assignments) if int(a) in ever}


def sensitivity(
    model: ModelFile,
    thresholds: Sequence[int] = (0, 10),
    k_values: Sequence[int] = (2, 3, 4, 5, 6),
    methods: Sequence[str] = ("kmeans", "kmedoids", "ward"),
) -> ModelFile:
    """Robustness sweeps on an already-fit model; returns an updated copy.

    The (method, K) grid reclusters the fitted scores per cell.  The
    citation-floor sweep reclusters the items whose totals reach each
    threshold and reports the adjusted Rand index against the first
    threshold's run on the common items, plus persistence of evergreen
    cluster membership.
    """
    cfg = model.data["config"]
    basis = model.basis()
    if basis.k < 1:
        raise ConfigError("sensitivity needs a model with a nonempty basis")
    scores = model.scores()
    points = _cluster_points(scores, basis, cfg.get("standardize", False))
    seed = int(cfg.get("seed", 0))
    restarts = int(cfg.get("restarts", 10))
    th_cfg = clus.ShapeThresholds(evergreen_rel_tol=cfg.get("evergreen_tol", 0.05))
    sweep = clus.robustness_sweep(
        points, k_values, list(methods), seed=seed, restarts=restarts,
        basis=basis, thresholds=th_cfg,
    )

    corpus = model.corpus()
    totals = counts_matrix(corpus).sum(axis=1)
    ids = np.asarray(corpus.ids)
    method = cfg.get("method", "kmeans")
    k = int(cfg.get("k_clusters", 4))
    runs = {}
    for tau in thresholds:
        mask = totals >= tau
        if int(mask.sum()) < k:
            runs[int(tau)] = None
            continue
        sub = points[mask]
        cm = _run_cluster_method(method, sub, k, seed, restarts)
        fallback = cm.centroids * (
            np.sqrt(basis.eigenvalues)[None, :]
            if cfg.get("standardize", False)
            else 1.0
        )
        raw_cent = _raw_centroids(scores[mask], cm.assignments, k, fallback)
        labels = clus.label_clusters(cm, basis, th_cfg, centroids=raw_cent)
        runs[int(tau)] = {
            "ids": ids[mask],
            "assignments": cm.assignments,
            "labels": labels,
        }
    base_tau = int(thresholds[0])
    base = runs[base_tau]
    threshold_report = {"base_threshold": base_tau, "method": method, "k": k, "runs": {}}
    for tau, run in runs.items():
        entry: dict = {"kept": int((totals >= tau).sum())}
        if run is not None and base is not None:
            common = np.intersect1d(base["ids"], run["ids"])
            if common.size:
                pos_b = {i: j for j, i in enumerate(base["ids"])}
                pos_r = {i: j for j, i in enumerate(run["ids"])}
                a = [int(base["assignments"][pos_b[i]]) for i in common]
                b = [int(run["assignments"][pos_r[i]]) for i in common]
                entry["ari_vs_base"] = clus.adjusted_rand_index(a, b)
                ever_b = _evergreen_items(base["assignments"], base["labels"], base["ids"])
                ever_r = _evergreen_items(run["assignments"], run["labels"], run["ids"])
                ever_b_common = ever_b & set(common.tolist())
                entry["evergreen_persistence"] = (
                    len(ever_b_common & ever_r) / len(ever_b_common)
                    if ever_b_common
                    else None
                )
            entry["labels"] = list(run["labels"])
        threshold_report["runs"][str(tau)] = entry

    data = dict(model.data)
    data["robustness"] = sweep.report
    data["thresholds"] = threshold_report
    data["checksum"] = _checksum(data)
    return ModelFile(data)
