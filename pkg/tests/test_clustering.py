import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citetraj.clustering import (
    ShapeThresholds,
    adjusted_rand_index,
    classify_item,
    kmeans,
    kmedoids,
    label_clusters,
    robustness_sweep,
    silhouette_mean,
    ward,
)
from citetraj.errors import ConfigError


def brute_force_kmeans_ss(points, k):
    """Minimum within-cluster sum of squares over every labeling."""
    n = len(points)
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        present = set(labels)
        if len(present) < k:
            continue
        ss = 0.0
        for j in present:
            members = points[[i for i, lab in enumerate(labels) if lab == j]]
            centroid = members.mean(axis=0)
            ss += ((members - centroid) ** 2).sum()
        best = min(best, ss)
    return best


class TestKmeans:
    def test_two_separated_points(self):
        points = np.array([[0.0, 0.0], [10.0, 10.0]])
        model = kmeans(points, 2, seed=0, restarts=4)
        assert model.within_ss == pytest.approx(0.0, abs=1e-12)
        assert len(set(model.assignments.tolist())) == 2

    def test_identical_points_single_cluster(self):
        points = np.ones((5, 3)) * 2.5
        model = kmeans(points, 1, seed=0)
        assert model.centroids[0] == pytest.approx([2.5, 2.5, 2.5])
        assert model.within_ss == pytest.approx(0.0, abs=1e-12)

    def test_k1_grand_mean_and_total_variance(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((40, 3))
        model = kmeans(points, 1, seed=0)
        assert model.centroids[0] == pytest.approx(points.mean(axis=0), abs=1e-12)
        total = ((points - points.mean(axis=0)) ** 2).sum()
        assert model.within_ss == pytest.approx(total, rel=1e-12)

    def test_matches_exhaustive_optimum(self):
        rng = np.random.default_rng(19)
        points = rng.uniform(-5, 5, size=(8, 2))
        model = kmeans(points, 2, seed=0, restarts=20)
        assert model.within_ss == pytest.approx(
            brute_force_kmeans_ss(points, 2), rel=1e-9
        )

    def test_lloyd_history_nonincreasing(self):
        rng = np.random.default_rng(2)
        points = rng.standard_normal((60, 4))
        model = kmeans(points, 4, seed=1, restarts=3)
        history = np.asarray(model.details["history"])
        assert (np.diff(history) <= 1e-12 * np.abs(history[:-1])).all()

    def test_assignments_are_nearest_centroid(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((50, 3))
        model = kmeans(points, 3, seed=0)
        dists = ((points[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(model.assignments, dists.argmin(axis=1))
        assert model.within_ss == pytest.approx(
            dists[np.arange(50), model.assignments].sum(), rel=1e-12
        )

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((30, 2))
        a = kmeans(points, 3, seed=42, restarts=5)
        b = kmeans(points, 3, seed=42, restarts=5)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centroids, b.centroids)

    def test_n_less_than_k(self):
        with pytest.raises(ConfigError):
            kmeans(np.zeros((2, 2)), 3)


class TestKmedoids:
    def test_k_equals_n(self):
        rng = np.random.default_rng(7)
        points = rng.standard_normal((5, 2))
        model = kmedoids(points, 5)
        assert model.within_ss == pytest.approx(0.0, abs=1e-12)
        assert sorted(model.details["medoid_indices"]) == [0, 1, 2, 3, 4]

    def test_two_tight_triples(self):
        points = np.array(
            [[0, 0], [0.1, 0], [0, 0.1], [9, 9], [9.1, 9], [9, 9.1]], dtype=float
        )
        model = kmedoids(points, 2)
        medoids = model.details["medoid_indices"]
        assert len({m < 3 for m in medoids}) == 2  # one medoid per triple

    def test_matches_exhaustive_pairs(self):
        rng = np.random.default_rng(23)
        points = rng.uniform(-4, 4, size=(7, 2))
        model = kmedoids(points, 2)
        d = ((points[:, None, :] - points[None]) ** 2).sum(axis=2)
        best = min(
            np.minimum(d[:, a], d[:, b]).sum()
            for a, b in itertools.combinations(range(7), 2)
        )
        assert model.within_ss == pytest.approx(best, rel=1e-12)


def reference_ward_merges(points, k):
    """Independent Lance-Williams implementation used as the oracle."""
    n = len(points)
    d2 = ((points[:, None, :] - points[None]) ** 2).sum(axis=2).astype(float)
    sizes = {i: 1 for i in range(n)}
    active = set(range(n))
    merges = []
    while len(active) > k:
        best = None
        for i in sorted(active):
            for j in sorted(active):
                if j <= i:
                    continue
                if best is None or d2[i, j] < best[2] - 1e-15:
                    best = (i, j, d2[i, j])
        i, j, dist = best
        merges.append((i, j, dist))
        for v in sorted(active - {i, j}):
            ni, nj, nv = sizes[i], sizes[j], sizes[v]
            d2[i, v] = d2[v, i] = (
                (ni + nv) * d2[i, v] + (nj + nv) * d2[j, v] - nv * dist
            ) / (ni + nj + nv)
        sizes[i] = sizes[i] + sizes[j]
        active.remove(j)
    return merges


class TestWard:
    def test_k_equals_n_trivial(self):
        points = np.arange(8, dtype=float).reshape(4, 2)
        model = ward(points, 4)
        assert sorted(model.assignments.tolist()) == [0, 1, 2, 3]
        assert model.within_ss == pytest.approx(0.0, abs=1e-12)

    def test_far_pairs_merge_first(self):
        points = np.array([[0, 0], [0.2, 0], [50, 50], [50.2, 50]], dtype=float)
        model = ward(points, 2)
        assert model.assignments[0] == model.assignments[1]
        assert model.assignments[2] == model.assignments[3]

    def test_matches_reference_merge_trace(self):
        rng = np.random.default_rng(29)
        points = rng.uniform(-3, 3, size=(6, 2))
        model = ward(points, 3)
        expected = reference_ward_merges(points, 3)
        got = model.details["merges"]
        assert len(got) == len(expected)
        for (gi, gj, gd), (ei, ej, ed) in zip(got, expected):
            assert (gi, gj) == (ei, ej)
            assert gd == pytest.approx(ed, rel=1e-10)


def synthetic_curve_fit(intensity):
    """Minimal stand-in carrying just the fitted intensity curve."""
    from citetraj.poisson import TrajectoryFit

    curve = np.asarray(intensity, dtype=float)
    return TrajectoryFit(
        id="x", scores=np.zeros(1), eta=np.log(np.maximum(curve, 1e-12)),
        intensity=curve, loglik=0.0, mse=0.0, iterations=1, converged=True,
    )


def exact_poly_basis(t_years=30):
    """Basis whose span contains every polynomial log curve of degree <= 3."""
    from citetraj.data import TimeGrid
    from citetraj.fpca import LatentBasis
    from citetraj.synthgen import make_basis

    phi = make_basis(t_years, 4, "poly")
    return LatentBasis(
        grid=TimeGrid(t_years),
        mean=np.zeros(t_years),
        mean_derivative=np.zeros(t_years),
        eigenvalues=np.array([4.0, 3.0, 2.0, 1.0]),
        eigenfunctions=phi,
        fve=np.array([0.4, 0.7, 0.9, 1.0]),
    )


def fake_model(centroids):
    from citetraj.clustering import ClusterModel

    centroids = np.asarray(centroids, dtype=float)
    k = len(centroids)
    return ClusterModel(
        method="kmeans", k=k, centroids=centroids,
        assignments=np.arange(k), within_ss=0.0, seed=0,
    )


class TestLabels:
    def test_label_rules(self):
        basis = exact_poly_basis()
        t = basis.grid.points
        phi = basis.eigenfunctions
        # log curves inside the polynomial span realize exactly
        rising = 0.08 * t
        peak20 = -0.5 * ((t - 20.0) / 3.0) ** 2
        cents = np.stack([phi @ rising, phi @ peak20])
        labels = label_clusters(fake_model(cents), basis)
        realized = np.exp(cents[0] @ phi)
        assert (np.diff(realized) >= -0.05 * realized.max()).all()
        assert labels[0] == "evergreen"
        assert labels[1] == "delayed"

    def test_normal_split_by_level(self):
        basis = exact_poly_basis()
        t = basis.grid.points
        phi = basis.eigenfunctions
        # humps peak at year 10 and decline sharply past the tolerance
        log_low = -0.5 * ((t - 10.0) / 2.5) ** 2
        log_high = log_low + np.log(6.0)
        cents = np.stack([phi @ log_low, phi @ log_high])
        labels = label_clusters(fake_model(cents), basis)
        assert labels == ("normal-low", "normal-high")

    def test_label_invariant_to_index_permutation(self, planted):
        basis = planted["basis"]
        model = kmeans(planted["scores"], 4, seed=3)
        labels = label_clusters(model, basis)
        perm = np.array([2, 0, 3, 1])
        inverse = np.argsort(perm)
        permuted = replace(
            model,
            centroids=model.centroids[perm],
            assignments=inverse[model.assignments],
        )
        assert label_clusters(permuted, basis) == tuple(labels[j] for j in perm)

    def test_centroid_dimension_mismatch(self, planted):
        model = kmeans(planted["scores"][:, :2], 2, seed=0)
        with pytest.raises(ConfigError, match="dimension"):
            label_clusters(model, planted["basis"])


class TestClassifyItem:
    def test_monotone_increasing_is_evergreen(self):
        t = np.arange(1, 31.0)
        assert classify_item(synthetic_curve_fit(0.2 * t + 1)) == "evergreen"

    def test_flat_is_evergreen(self):
        assert classify_item(synthetic_curve_fit(np.full(30, 3.0))) == "evergreen"

    def test_flash_in_the_pan(self):
        t = np.arange(1, 31.0)
        curve = 10 * np.exp(-0.5 * ((t - 3) / 1.5) ** 2) + 0.01
        label = classify_item(synthetic_curve_fit(curve))
        assert label == "flash-in-the-pan"

    def test_delayed_document(self):
        t = np.arange(1, 31.0)
        curve = 10 * np.exp(-0.5 * ((t - 20) / 4.0) ** 2) + 0.2
        assert classify_item(synthetic_curve_fit(curve)) == "delayed document"

    def test_normal_document(self):
        t = np.arange(1, 31.0)
        curve = 10 * np.exp(-0.5 * ((t - 9) / 2.0) ** 2) + 3.0
        assert classify_item(synthetic_curve_fit(curve)) == "normal document"

    @settings(max_examples=20, deadline=None)
    @given(st.floats(min_value=0.01, max_value=100.0))
    def test_scale_invariance(self, scale):
        t = np.arange(1, 31.0)
        for curve in (
            0.2 * t + 1,
            10 * np.exp(-0.5 * ((t - 3) / 1.5) ** 2) + 0.01,
            10 * np.exp(-0.5 * ((t - 20) / 4.0) ** 2) + 0.2,
        ):
            a = classify_item(synthetic_curve_fit(curve))
            b = classify_item(synthetic_curve_fit(scale * curve))
            assert a == b


class TestMetrics:
    def test_ari_identical_partitions(self):
        assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_ari_hand_computed(self):
        # independent pair-counting evaluation of the adjusted index
        a = [0, 0, 0, 1, 1, 1]
        b = [0, 0, 1, 1, 1, 1]
        same_a = {(i, j) for i in range(6) for j in range(i + 1, 6) if a[i] == a[j]}
        same_b = {(i, j) for i in range(6) for j in range(i + 1, 6) if b[i] == b[j]}
        n = 15
        sum_ij = len(same_a & same_b)
        expected = len(same_a) * len(same_b) / n
        max_index = 0.5 * (len(same_a) + len(same_b))
        reference = (sum_ij - expected) / (max_index - expected)
        assert adjusted_rand_index(a, b) == pytest.approx(reference, rel=1e-12)

    def test_ari_permutation_invariant(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 4, 50)
        b = rng.integers(0, 4, 50)
        relabeled = (b + 2) % 4
        assert adjusted_rand_index(a, b) == pytest.approx(
            adjusted_rand_index(a, relabeled), rel=1e-12
        )

    def test_silhouette_direct_formula(self):
        points = np.array([[0.0], [1.0], [10.0], [11.0]])
        labels = np.array([0, 0, 1, 1])
        # for each point: a = dist to own partner, b = mean dist to others
        expected = []
        for i in range(4):
            own = [j for j in range(4) if labels[j] == labels[i] and j != i]
            other = [j for j in range(4) if labels[j] != labels[i]]
            a = np.mean([abs(points[i, 0] - points[j, 0]) for j in own])
            b = np.mean([abs(points[i, 0] - points[j, 0]) for j in other])
            expected.append((b - a) / max(a, b))
        assert silhouette_mean(points, labels) == pytest.approx(np.mean(expected))

    def test_silhouette_needs_two_clusters(self):
        with pytest.raises(ConfigError):
            silhouette_mean(np.zeros((4, 2)), np.zeros(4, dtype=int))


class TestSweep:
    def test_single_cell_matches_direct_call(self, planted):
        points = planted["scores"]
        sweep = robustness_sweep(points, [2], ["kmeans"], seed=5, restarts=4)
        direct = kmeans(points, 2, seed=5, restarts=4)
        model = sweep.cell("kmeans", 2)
        assert np.array_equal(model.assignments, direct.assignments)
        assert sweep.report["cells"]["kmeans"]["2"]["within_ss"] == pytest.approx(
            direct.within_ss
        )

    def test_within_ss_nonincreasing_in_k(self, planted):
        points = planted["scores"]
        sweep = robustness_sweep(points, [2, 3, 4, 5], ["kmeans"], seed=0)
        ss = [sweep.report["cells"]["kmeans"][str(k)]["within_ss"] for k in (2, 3, 4, 5)]
        assert all(b <= a + 1e-9 for a, b in zip(ss, ss[1:]))

    def test_planted_archetypes_recovered_by_all_methods(self, planted):
        points = planted["scores"]
        truth = planted["truth"].archetype_index()
        sweep = robustness_sweep(points, [4], ["kmeans", "kmedoids", "ward"],
                                 seed=0, basis=planted["basis"])
        for method in ("kmeans", "kmedoids", "ward"):
            model = sweep.cell(method, 4)
            assert adjusted_rand_index(model.assignments, truth) >= 0.8
        for k, cell in sweep.report["ari"].items():
            for pair, value in cell.items():
                assert value >= 0.8

    def test_unknown_method(self, planted):
        with pytest.raises(ConfigError, match="unknown"):
            robustness_sweep(planted["scores"], [2], ["dbscan"])
