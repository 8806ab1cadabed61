import numpy as np
import pytest
from scipy.linalg import helmert

from topolab.analysis import (
    COLOCALIZATION_ALPHAS,
    activation_correlations,
    calibration,
    colocalization_distance,
    compute_rsm,
    effective_dimensionality,
    morans_i,
    morans_i_batch,
    neighbor_weight_correlation,
    pearson_matrix,
    poz,
    second_order_isomorphism,
    unit_entropy,
    weight_perturbation_rows,
)
from topolab.grid import TopoGrid
from topolab.models import build_mnist_net

from oracles import (
    cosine_loop,
    mean_pairwise_grid_distance,
    morans_i_loop,
    pearson_loop,
)


@pytest.fixture(scope="module")
def grid():
    return TopoGrid()


class TestRsm:
    def test_orthonormal_rows_give_identity(self):
        w = np.eye(10, 121)
        assert np.allclose(compute_rsm(w), np.eye(10))

    def test_duplicated_row_scores_one(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(10, 121))
        w[3] = w[7]
        rsm = compute_rsm(w)
        assert rsm[3, 7] == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force_cosine(self):
        w = np.random.default_rng(1).normal(size=(10, 121))
        rsm = compute_rsm(w)
        for i in range(10):
            for j in range(10):
                assert rsm[i, j] == pytest.approx(cosine_loop(w[i], w[j]), abs=1e-12)

    def test_symmetric_unit_diagonal(self):
        w = np.random.default_rng(2).normal(size=(10, 121))
        rsm = compute_rsm(w)
        assert np.allclose(rsm, rsm.T)
        assert np.allclose(np.diag(rsm), 1.0)

    def test_zero_row_flagged_as_zero_similarity(self):
        w = np.random.default_rng(3).normal(size=(10, 121))
        w[5] = 0.0
        rsm = compute_rsm(w)
        assert np.all(rsm[5] == 0.0)

    def test_pearson_variant(self):
        w = np.random.default_rng(4).normal(size=(10, 121))
        rsm = compute_rsm(w, metric="pearson")
        assert rsm[0, 1] == pytest.approx(pearson_loop(w[0], w[1]), abs=1e-12)


class TestSecondOrderIsomorphism:
    def test_identity(self):
        rsm = compute_rsm(np.random.default_rng(5).normal(size=(10, 121)))
        assert second_order_isomorphism(rsm, rsm) == pytest.approx(1.0, abs=1e-12)

    def test_negated_off_diagonal(self):
        rsm = compute_rsm(np.random.default_rng(6).normal(size=(10, 121)))
        flipped = -rsm.copy()
        np.fill_diagonal(flipped, 1.0)
        assert second_order_isomorphism(rsm, flipped) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_triangle_rejected(self):
        with pytest.raises(ValueError):
            second_order_isomorphism(np.eye(10), np.eye(10))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            second_order_isomorphism(np.ones((10, 10)), np.ones((9, 9)))


class TestWeightPerturbationProtocol:
    def test_sigma_zero_is_perfect_soi(self):
        model = build_mnist_net(0)
        images = np.random.default_rng(7).normal(size=(16, 1, 28, 28))
        labels = np.random.default_rng(8).integers(0, 10, 16)
        rows = weight_perturbation_rows(model, images, labels, sigma_scales=[0.0],
                                        n_reps=3, base_seed=1)
        assert len(rows) == 3
        for r in rows:
            assert r["soi"] == pytest.approx(1.0, abs=1e-12)
            assert r["accuracy"] == r["baseline_accuracy"]
            assert r["drop_pp"] == 0.0

    def test_clean_matrix_restored(self):
        model = build_mnist_net(1)
        before = model.class_prototypes()
        images = np.random.default_rng(9).normal(size=(8, 1, 28, 28))
        labels = np.random.default_rng(10).integers(0, 10, 8)
        weight_perturbation_rows(model, images, labels, sigma_scales=[1.0], n_reps=2)
        assert np.array_equal(model.class_prototypes(), before)

    def test_row_cardinality(self):
        model = build_mnist_net(2)
        images = np.random.default_rng(11).normal(size=(8, 1, 28, 28))
        labels = np.random.default_rng(12).integers(0, 10, 8)
        rows = weight_perturbation_rows(model, images, labels, n_reps=2)
        assert len(rows) == 4 * 2  # four sigma levels, two reps


class TestEntropy:
    def test_constant_unit_zero(self):
        acts = np.zeros((100, 4))
        acts[:, 1] = 3.3
        per_unit, mean = unit_entropy(acts)
        assert per_unit[0] == 0.0 and per_unit[1] == 0.0
        assert mean == 0.0

    def test_uniform_over_k_bins_gives_ln_k(self):
        k = 5
        vals = np.repeat([0.1, 0.3, 0.5, 0.7, 0.9], 20)
        per_unit, _ = unit_entropy(vals[:, None], bins=k)
        assert per_unit[0] == pytest.approx(np.log(k), abs=1e-12)

    def test_gaussian_entropy_positive_and_binsensitive(self):
        acts = np.random.default_rng(13).normal(size=(10000, 3))
        e30, _ = unit_entropy(acts, bins=30)
        e10, _ = unit_entropy(acts, bins=10)
        assert np.all(e30 > 0)
        assert np.all(e30 > e10)  # finer binning raises histogram entropy


class TestPoz:
    def test_all_positive_unit(self):
        acts = np.abs(np.random.default_rng(14).normal(size=(50, 2))) + 0.1
        frac, mean = poz(acts)
        assert np.all(frac == 0.0) and mean == 0.0

    def test_dead_unit(self):
        acts = np.zeros((50, 1))
        frac, _ = poz(acts)
        assert frac[0] == 1.0

    def test_mixed_fraction(self):
        acts = np.array([[0.0], [1.0], [0.0], [2.0]])
        frac, _ = poz(acts)
        assert frac[0] == 0.5


class TestNeighborWeightCorrelation:
    def test_positive_affine_rows_score_one(self, grid):
        rng = np.random.default_rng(15)
        base = rng.normal(size=64)
        scale = rng.uniform(0.5, 2.0, size=121)
        shift = rng.normal(size=121)
        w = base[None, :] * scale[:, None] + shift[:, None]
        field = neighbor_weight_correlation(w, grid)
        assert np.allclose(field.neighbor_mean, 1.0, atol=1e-10)

    def test_negated_neighbor_scores_minus_one(self):
        g2 = TopoGrid(1, 2)
        v = np.random.default_rng(16).normal(size=16)
        field = neighbor_weight_correlation(np.stack([v, -v]), g2)
        assert np.allclose(field.neighbor_mean, -1.0, atol=1e-12)

    def test_matches_brute_force_over_840_pairs(self, grid):
        w = np.random.default_rng(17).normal(size=(121, 64))
        field = neighbor_weight_correlation(w, grid)
        for i in range(0, 121, 13):
            rs = [pearson_loop(w[i], w[j]) for j in grid.moore(i)]
            assert field.neighbor_mean[i] == pytest.approx(np.mean(rs), abs=1e-12)

    def test_pearson_affine_invariance(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=100)
        y = rng.normal(size=100)
        r, _ = pearson_matrix(np.stack([x, y], axis=1))
        for a in (2.0, -3.0):
            r2, _ = pearson_matrix(np.stack([a * x + 1.0, y], axis=1))
            assert r2[0, 1] == pytest.approx(np.sign(a) * r[0, 1], abs=1e-12)

    def test_degenerate_row_flagged(self, grid):
        w = np.random.default_rng(19).normal(size=(121, 64))
        w[60] = 5.0  # constant vector: zero variance
        field = neighbor_weight_correlation(w, grid)
        assert 60 in field.degenerate_units
        assert field.neighbor_mean[60] == 0.0


class TestActivationCorrelations:
    def test_duplicated_columns_correlate_fully(self, grid):
        rng = np.random.default_rng(20)
        acts = rng.normal(size=(200, 121))
        acts[:, 1] = acts[:, 0]
        field = activation_correlations(acts, grid)
        r, _ = pearson_matrix(acts)
        assert r[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_independent_columns_nearly_uncorrelated(self, grid):
        acts = np.random.default_rng(21).normal(size=(10000, 121))
        field = activation_correlations(acts, grid)
        assert np.abs(field.all_pairs).mean() < 0.05

    def test_all_pairs_count(self, grid):
        acts = np.random.default_rng(22).normal(size=(50, 121))
        field = activation_correlations(acts, grid)
        assert field.all_pairs.shape == (7260,)
        assert field.neighbor_mean.shape == (121,)


class TestColocalization:
    def test_constructed_adjacent_pairs(self, grid):
        # four synthetic clusters, each a pair of adjacent duplicated units
        rng = np.random.default_rng(23)
        acts = rng.normal(size=(400, 121)) * 0.01
        for a, b in [(0, 1), (30, 31), (60, 61), (90, 91)]:
            shared = rng.normal(size=400) * 10
            acts[:, a] += shared
            acts[:, b] += shared
        res = colocalization_distance(acts, grid, alpha=0.8, n_control_permutations=50)
        assert res.pair_count == 4
        assert res.mean_distance == pytest.approx(1.0, abs=1e-12)

    def test_control_baseline_matches_mean_pairwise_distance(self, grid):
        # a randomly placed pair is uniform over distinct cell pairs, so the
        # permutation control converges on the exact mean pairwise distance
        rng = np.random.default_rng(24)
        acts = rng.normal(size=(300, 121))
        shared = rng.normal(size=300)
        for u in (10, 40, 50, 80):  # several connected pairs stabilize the mean
            acts[:, u] += shared * 3
        res = colocalization_distance(acts, grid, alpha=0.5, n_control_permutations=2000,
                                      control_seed=1)
        expected = mean_pairwise_grid_distance(11, 11)
        assert expected == pytest.approx(5.758545, abs=1e-4)
        assert res.control_mean == pytest.approx(expected, abs=0.1)

    def test_no_pairs_reported_missing(self, grid):
        acts = np.random.default_rng(25).normal(size=(500, 121))
        res = colocalization_distance(acts, grid, alpha=0.8, n_control_permutations=10)
        assert res.pair_count == 0
        assert res.mean_distance is None

    def test_pair_sets_nested_in_alpha(self, grid):
        rng = np.random.default_rng(26)
        acts = rng.normal(size=(100, 121))
        acts[:, :40] += rng.normal(size=(100, 1)) * np.linspace(0.2, 2.0, 40)[None, :]
        counts = [
            colocalization_distance(acts, grid, a, n_control_permutations=2).pair_count
            for a in COLOCALIZATION_ALPHAS
        ]
        assert counts == sorted(counts, reverse=True)


class TestMoransI:
    def test_linear_ramp_positive(self, grid):
        ramp = np.add.outer(np.arange(11.0), np.arange(11.0))
        assert morans_i(ramp, grid) > 0.5

    def test_checkerboard_negative(self, grid):
        # under Moore adjacency the diagonal neighbors of a checkerboard
        # match, so the score is only mildly negative
        board = np.indices((11, 11)).sum(axis=0) % 2
        assert morans_i(board.astype(float), grid) < 0.0

    def test_stripes_strongly_negative(self, grid):
        stripes = (np.indices((11, 11))[1] % 2).astype(float)
        assert morans_i(stripes, grid) < -0.3

    def test_constant_map_is_zero(self, grid):
        assert morans_i(np.full((11, 11), 2.0), grid) == 0.0

    def test_random_maps_match_null_expectation(self, grid):
        rng = np.random.default_rng(27)
        vals = morans_i_batch(rng.normal(size=(200, 121)), grid)
        assert abs(vals.mean() - (-1 / 120)) < 0.03
        assert np.all(np.abs(vals) <= 1.2)

    def test_matches_loop_oracle(self, grid):
        rng = np.random.default_rng(28)
        for _ in range(3):
            x = rng.normal(size=121)
            assert morans_i(x, grid) == pytest.approx(
                morans_i_loop(x, grid.adjacency), abs=1e-12
            )

    def test_batch_matches_single(self, grid):
        rng = np.random.default_rng(29)
        maps = rng.normal(size=(5, 121))
        batch = morans_i_batch(maps, grid)
        for k in range(5):
            assert batch[k] == pytest.approx(morans_i(maps[k], grid), abs=1e-12)


class TestEffectiveDimensionality:
    def test_whitened_features_give_full_dimension(self):
        # Helmert rows are orthonormal and orthogonal to the ones vector,
        # so these columns have exactly identity covariance
        n, k = 40, 7
        h = helmert(n, full=True)
        m = h[1 : k + 1].T * np.sqrt(n - 1)
        assert effective_dimensionality(m) == pytest.approx(k, abs=1e-9)

    def test_rank_one_matrix(self):
        rng = np.random.default_rng(30)
        m = np.outer(rng.normal(size=50), rng.normal(size=20))
        assert effective_dimensionality(m) == pytest.approx(1.0, abs=1e-9)

    def test_matches_svd_oracle(self):
        m = np.random.default_rng(31).normal(size=(50, 20))
        c = m - m.mean(axis=0, keepdims=True)
        sv = np.linalg.svd(c, compute_uv=False)
        eig = sv**2 / (50 - 1)
        want = eig.sum() ** 2 / (eig**2).sum()
        assert effective_dimensionality(m) == pytest.approx(want, abs=1e-8)

    def test_bounds(self):
        m = np.random.default_rng(32).normal(size=(30, 12))
        ed = effective_dimensionality(m)
        assert 1.0 <= ed <= 12.0

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            effective_dimensionality(np.zeros((5, 5)))


class TestCalibration:
    def test_perfect_confident_classifier(self):
        labels = np.random.default_rng(33).integers(0, 10, 100)
        logits = np.full((100, 10), -50.0)
        logits[np.arange(100), labels] = 50.0
        ece, gap = calibration(logits, labels)
        assert ece == pytest.approx(0.0, abs=1e-9)
        assert gap == pytest.approx(100.0)

    def test_logit_gap_closed_form(self):
        logits = np.zeros((1, 10))
        logits[0, 0] = 4.5
        ece, gap = calibration(logits, np.array([0]))
        assert gap == pytest.approx(4.5)
        p_top = np.exp(4.5) / (np.exp(4.5) + 9.0)
        zs = logits - logits.max()
        probs = np.exp(zs[0]) / np.exp(zs[0]).sum()
        assert probs[0] == pytest.approx(p_top, rel=1e-12)

    def test_known_miscalibration(self):
        # every prediction has confidence exactly 0.8; accuracy is 0.6
        n = 1000
        logits = np.zeros((n, 10))
        logits[:, 0] = np.log(0.8) - np.log(0.2 / 9)
        labels = np.zeros(n, dtype=np.int64)
        labels[: int(n * 0.4)] = 1  # 40% wrong
        ece, _ = calibration(logits, labels)
        assert ece == pytest.approx(0.2, abs=1e-9)
