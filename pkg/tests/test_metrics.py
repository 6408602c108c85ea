import itertools

import numpy as np
import pytest

from orthowgan import autodiff as ad
from orthowgan import metrics
from orthowgan.ortho import bjorck_orthogonalize, svd_reinit
from orthowgan.wgan import DatasetSpec, sample_real


def linear_critic(w_row):
    w = np.asarray(w_row, dtype=np.float64).reshape(1, -1)
    return ad.MlpParams([w], [np.zeros(1)])


def identity_generator(dim=2):
    return ad.MlpParams([np.eye(dim)], [np.zeros(dim)])


def orthogonal_critic(rng, dims=(2, 32, 32, 32, 1)):
    net = ad.mlp(list(dims), rng)
    net.weights = [bjorck_orthogonalize(w, 1e-10) for w in net.weights]
    return net


class TestEstimateLipschitz:
    def test_linear_critic_exact(self):
        rng = np.random.default_rng(0)
        critic = linear_critic([3.0, 4.0])
        real, fake = rng.normal(size=(32, 2)), rng.normal(size=(32, 2))
        assert metrics.estimate_lipschitz(critic, real, fake, 64, rng) == pytest.approx(5.0)

    def test_orthogonal_critic_bounded_by_one(self):
        rng = np.random.default_rng(1)
        critic = orthogonal_critic(rng)
        real, fake = rng.normal(size=(64, 2)), rng.normal(size=(64, 2))
        assert metrics.estimate_lipschitz(critic, real, fake, 256, rng) <= 1.0 + 1e-6

    def test_zero_critic(self):
        critic = linear_critic([0.0, 0.0])
        rng = np.random.default_rng(2)
        assert metrics.estimate_lipschitz(critic, np.ones((4, 2)), np.zeros((4, 2)), 16, rng) == 0.0


class TestWassersteinEstimate:
    def test_zero_critic(self):
        rng = np.random.default_rng(3)
        est = metrics.wasserstein_estimate(
            linear_critic([0.0, 0.0]), identity_generator(), rng.normal(size=(32, 2)), 16, rng
        )
        assert est == 0.0

    def test_constant_critic_cancels(self):
        critic = ad.MlpParams([np.zeros((1, 2))], [np.full(1, 4.2)])
        rng = np.random.default_rng(4)
        est = metrics.wasserstein_estimate(critic, identity_generator(), rng.normal(size=(16, 2)), 64, rng)
        assert est == 0.0

    def test_identical_sample_sets(self):
        # identity generator fed the same stream that produced the real pool
        critic = linear_critic([1.5, -0.5])
        real = np.random.default_rng(77).standard_normal((64, 2))
        est = metrics.wasserstein_estimate(
            critic, identity_generator(), real, 64, np.random.default_rng(77)
        )
        assert abs(est) < 1e-12


class TestTournament:
    def _models(self, rng, n=3):
        models = []
        for _ in range(n):
            critic = ad.mlp([2, 8, 1], rng)
            gen = ad.mlp([4, 8, 2], rng)
            models.append((critic, gen))
        return models

    def test_relative_scores_and_sums(self):
        rng = np.random.default_rng(5)
        models = self._models(rng)
        data = rng.normal(size=(128, 2))
        res = metrics.tournament(models, data, rng.normal(size=(128, 2)), 64, rng)
        for i in range(res.n_models):
            expected = (res.w_raw[i] - res.w_hat[i]) / abs(res.w_hat[i])
            assert np.array_equal(res.w_rel[i], expected)
            assert res.s[i] == res.w_rel[i].sum()

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        models = self._models(rng)
        data, test = rng.normal(size=(128, 2)), rng.normal(size=(128, 2))
        res_a = metrics.tournament(models, data, test, 64, np.random.default_rng(9))
        scaled = [(c.copy(), g) for c, g in models]
        scaled[1][0].weights[-1] *= 7.0
        scaled[1][0].biases[-1] *= 7.0
        res_b = metrics.tournament(scaled, data, test, 64, np.random.default_rng(9))
        assert np.allclose(res_b.w_rel[1], res_a.w_rel[1], rtol=1e-12, atol=1e-12)
        assert np.allclose(res_b.w_hat[1], 7.0 * res_a.w_hat[1], rtol=1e-12)

    def test_degenerate_baseline_excluded(self):
        rng = np.random.default_rng(7)
        models = self._models(rng)
        dead_critic = ad.MlpParams([np.zeros((1, 2))], [np.zeros(1)])
        models.append((dead_critic, models[0][1]))
        res = metrics.tournament(models, rng.normal(size=(64, 2)), rng.normal(size=(64, 2)), 32, rng)
        assert res.excluded == [3]
        assert np.all(np.isnan(res.w_rel[3]))
        assert np.isnan(res.s[3])

    def test_needs_two_models(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            metrics.tournament(self._models(rng, 1), np.ones((4, 2)), np.ones((4, 2)), 4, rng)


class TestNdbModes:
    def test_calibrated_on_matched_halves(self):
        # same-distribution halves: pooled significant fraction stays near alpha
        spec = DatasetSpec(kind="gaussian_ring")
        sig = bins = 0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            pool = sample_real(spec, 4000, rng)
            rep = metrics.ndb_modes(pool[:2000], pool[2000:], 20, 0.05, rng)
            sig += rep.significant_bins
            bins += rep.k - rep.skipped_bins
        assert sig / bins <= 2 * 0.05

    def test_collapse_to_single_point(self):
        spec = DatasetSpec(kind="gaussian_ring")
        rng = np.random.default_rng(9)
        train = sample_real(spec, 2000, rng)
        generated = np.repeat(train[:1], 2000, axis=0)
        rep = metrics.ndb_modes(train, generated, 8, 0.05, rng)
        assert rep.significant_bins >= 6

    def test_single_bin_never_significant(self):
        rng = np.random.default_rng(10)
        rep = metrics.ndb_modes(rng.normal(size=(100, 2)), rng.normal(size=(50, 2)), 1, 0.05, rng)
        assert rep.significant_bins == 0

    def test_monotone_under_collapse(self):
        # emptying one covered cell cannot reduce the number of starved cells
        spec = DatasetSpec(kind="gaussian_ring", mode_sigma=0.05)
        rng = np.random.default_rng(11)
        train = sample_real(spec, 4000, rng)
        keep = train[np.arctan2(train[:, 1], train[:, 0]) > 0.0]  # half the modes
        generated = keep[np.random.default_rng(1).integers(0, len(keep), 4000)]
        before = metrics.ndb_modes(train, generated, 8, 0.05, np.random.default_rng(2))
        target = next(i for i, b in enumerate(before.per_bin) if b.gen_count > 0)
        centers_rng = np.random.default_rng(2)
        _, labels = __import__("scipy.cluster.vq", fromlist=["kmeans2"]).kmeans2(
            train, 8, iter=50, minit="++", seed=centers_rng
        )
        del labels
        gen_labels = self._assign(train, generated, np.random.default_rng(2))
        pruned = generated[gen_labels != target]
        after = metrics.ndb_modes(train, pruned, 8, 0.05, np.random.default_rng(2))
        assert after.significant_bins >= before.significant_bins

    @staticmethod
    def _assign(train, generated, rng):
        import scipy.cluster.vq as vq

        centers, _ = vq.kmeans2(train, 8, iter=50, minit="++", seed=rng)
        return vq.vq(generated, centers)[0]

    def test_empty_train_cell_skipped(self):
        base = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        train = np.repeat(base, 20, axis=0)
        rng = np.random.default_rng(12)
        rep = metrics.ndb_modes(train, train, 5, 0.05, rng)
        assert rep.skipped_bins >= 1
        assert rep.significant_bins == 0

    def test_validation(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(50, 2))
        with pytest.raises(ValueError):
            metrics.ndb_modes(x, x, 0, 0.05, rng)
        with pytest.raises(ValueError):
            metrics.ndb_modes(x, x, 101, 0.05, rng)
        with pytest.raises(ValueError):
            metrics.ndb_modes(x, x, 5, 1.5, rng)


class TestSingularSpectrum:
    def test_orthogonal_all_ones(self):
        net = orthogonal_critic(np.random.default_rng(14))
        for sig in metrics.singular_spectrum(net):
            assert np.allclose(sig, 1.0, atol=1e-8)

    def test_diagonal_layer(self):
        net = ad.MlpParams([np.diag([3.0, 2.0, 1.0])], [np.zeros(3)])
        assert np.allclose(metrics.singular_spectrum(net)[0], [3.0, 2.0, 1.0])

    def test_reinit_spectrum(self):
        rng = np.random.default_rng(15)
        net = ad.mlp([2, 16, 16, 1], rng)
        net.weights = [svd_reinit(w, 1.1) for w in net.weights]
        for sig in metrics.singular_spectrum(net):
            assert np.allclose(sig, 1.1, atol=1e-8)


class TestExactW1:
    def test_identical_sets(self):
        x = np.random.default_rng(16).normal(size=(32, 2))
        assert metrics.exact_w1(x, x) == 0.0

    def test_two_point_hand_case(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        y = np.array([[0.0, 1.0], [1.0, 1.0]])
        assert metrics.exact_w1(x, y) == pytest.approx(1.0)

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(17)
        x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        dists = np.linalg.norm(x[:, None] - y[None], axis=2)
        brute = min(
            sum(dists[i, p[i]] for i in range(6)) / 6.0
            for p in itertools.permutations(range(6))
        )
        assert metrics.exact_w1(x, y) == pytest.approx(brute, rel=1e-12)

    def test_weak_duality_for_lipschitz_critic(self):
        rng = np.random.default_rng(18)
        critic = orthogonal_critic(rng)
        spec = DatasetSpec(kind="spiral")
        for _ in range(5):
            x = sample_real(spec, 128, rng)
            y = rng.normal(size=(128, 2))
            estimate = float(ad.forward(critic, x).mean() - ad.forward(critic, y).mean())
            assert estimate <= metrics.exact_w1(x, y) * 1.001 + 1e-6

    def test_size_cap_and_shape(self):
        with pytest.raises(ValueError):
            metrics.exact_w1(np.zeros((257, 2)), np.zeros((257, 2)))
        with pytest.raises(ValueError):
            metrics.exact_w1(np.zeros((4, 2)), np.zeros((5, 2)))


def test_metrics_deterministic_given_seed():
    rng = np.random.default_rng(19)
    critic = ad.mlp([2, 8, 1], rng)
    gen = ad.mlp([4, 8, 2], rng)
    real = rng.normal(size=(64, 2))

    def run(seed):
        r = np.random.default_rng(seed)
        a = metrics.wasserstein_estimate(critic, gen, real, 32, r)
        b = metrics.estimate_lipschitz(critic, real, real + 1.0, 32, r)
        rep = metrics.ndb_modes(real, real + 0.01, 5, 0.05, r)
        return a, b, rep.significant_bins, [s.z_statistic for s in rep.per_bin]

    assert run(42) == run(42)
