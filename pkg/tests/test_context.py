import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cftrack import context
from cftrack.errors import ConfigError, InsufficientDistinct, ShapeMismatch

from oracles import central_difference, max_relative_error


def blob_fixture(seed=0, n_per=10, spread=0.05):
    """Two tight 3-D blobs plus two isolated outliers; labels 1-based."""
    rng = np.random.default_rng(seed)
    centers = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    pts, labels = [], []
    for i, c in enumerate(centers):
        pts.append(c + spread * rng.standard_normal((n_per, 3)))
        labels.extend([i + 1] * n_per)
    outliers = np.array([[5.0, 5.0, 5.0], [-4.0, 2.0, -6.0]])
    return np.vstack(pts + [outliers]), np.array(labels + [1, 2]), n_per


class TestMakeDescriptor:
    def test_constant_map_normalizes_evenly(self):
        z = np.ones((3, 3, 4))
        assert np.allclose(context.make_descriptor(z), [0.5, 0.5, 0.5, 0.5])

    def test_zero_map_stays_zero(self):
        assert (context.make_descriptor(np.zeros((2, 2, 5))) == 0).all()

    def test_unit_norm(self):
        z = np.random.default_rng(0).uniform(0, 1, (4, 4, 6))
        assert np.linalg.norm(context.make_descriptor(z)) == pytest.approx(1.0, abs=1e-6)


class TestFarthestInit:
    def test_all_points_when_k_equals_n(self):
        d = np.random.default_rng(1).standard_normal((4, 2))
        out = context.farthest_init(d, 4, trials=10, rng=np.random.default_rng(0))
        assert sorted(map(tuple, out)) == sorted(map(tuple, d))

    def test_picks_extremes_in_one_dimension(self):
        d = np.array([[0.0], [0.1], [10.0]])
        out = context.farthest_init(d, 2, trials=200, rng=np.random.default_rng(0))
        assert sorted(v[0] for v in out) == [0.0, 10.0]

    def test_beats_median_random_subset(self):
        rng = np.random.default_rng(2)
        d = rng.standard_normal((50, 4))
        chosen = context.farthest_init(d, 4, trials=1000, rng=np.random.default_rng(3))
        best = context._min_pairwise_dist(chosen)
        samples = []
        for _ in range(1000):
            idx = rng.choice(50, 4, replace=False)
            samples.append(context._min_pairwise_dist(d[idx]))
        assert best >= np.median(samples)

    def test_insufficient_distinct_rejected(self):
        d = np.zeros((5, 2))
        with pytest.raises(InsufficientDistinct):
            context.farthest_init(d, 2, trials=5, rng=np.random.default_rng(0))


class TestTwoStepCluster:
    def test_recovers_blobs_and_absorbs_outliers(self):
        pts, labels, n_per = blob_fixture()
        model = context.two_step_cluster(pts, 2, rng=np.random.default_rng(5), trials=300)
        assert model.n_clusters == 2
        blob_a = model.assignments[:n_per]
        blob_b = model.assignments[n_per : 2 * n_per]
        assert len(set(blob_a)) == 1 and len(set(blob_b)) == 1
        assert blob_a[0] != blob_b[0]

    def test_separable_blobs_recovered_exactly(self):
        rng = np.random.default_rng(6)
        centers = np.eye(3) * 10
        pts = np.vstack([c + 0.01 * rng.standard_normal((8, 3)) for c in centers])
        model = context.two_step_cluster(pts, 3, rng=np.random.default_rng(7), trials=300)
        for g in range(3):
            group = model.assignments[8 * g : 8 * (g + 1)]
            assert len(set(group)) == 1

    def test_every_cluster_nonempty(self):
        pts, _, _ = blob_fixture(seed=8)
        model = context.two_step_cluster(pts, 2, rng=np.random.default_rng(9), trials=100)
        counts = np.bincount(model.assignments, minlength=3)[1:]
        assert (counts >= 1).all()

    def test_lloyd_objective_non_increasing_per_run(self):
        pts, _, _ = blob_fixture(seed=10)
        model = context.two_step_cluster(pts, 2, rng=np.random.default_rng(11), trials=100)
        assert len(model.objective_traces) == 2
        for trace in model.objective_traces:
            assert len(trace) >= 1
            assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_deterministic_for_fixed_seed(self):
        pts, _, _ = blob_fixture(seed=12)
        a = context.two_step_cluster(pts, 2, rng=np.random.default_rng(13), trials=50)
        b = context.two_step_cluster(pts, 2, rng=np.random.default_rng(13), trials=50)
        assert (a.assignments == b.assignments).all()
        assert (a.centroids == b.centroids).all()


class TestSelector:
    def test_zero_network_selects_first_class_uniformly(self):
        net = context.SelectorNetwork(
            w1=np.zeros((3, 8)), b1=np.zeros(8), w2=np.zeros((8, 4)), b2=np.zeros(4)
        )
        idx, probs = context.select(net, np.array([0.3, 0.2, 0.1]))
        assert idx == 1
        assert np.allclose(probs, 0.25)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(14)
        net = context.SelectorNetwork(
            w1=rng.standard_normal((3, 16)),
            b1=rng.standard_normal(16),
            w2=rng.standard_normal((16, 5)),
            b2=rng.standard_normal(5),
        )
        _, probs = context.select(net, rng.standard_normal(3))
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_argmax_invariant_to_logit_scaling(self):
        rng = np.random.default_rng(15)
        net = context.SelectorNetwork(
            w1=rng.standard_normal((3, 8)),
            b1=np.zeros(8),
            w2=rng.standard_normal((8, 4)),
            b2=np.zeros(4),
        )
        d = rng.standard_normal(3)
        idx, _ = context.select(net, d)
        net.w2 *= 7.5
        net.b2 *= 7.5
        idx2, _ = context.select(net, d)
        assert idx == idx2

    def test_dimension_mismatch_rejected(self):
        net = context.SelectorNetwork(
            w1=np.zeros((3, 4)), b1=np.zeros(4), w2=np.zeros((4, 2)), b2=np.zeros(2)
        )
        with pytest.raises(ShapeMismatch):
            context.select(net, np.zeros(5))

    def test_single_class_training_raises_its_probability(self):
        rng = np.random.default_rng(16)
        d = rng.uniform(0, 1, (12, 4))
        labels = np.ones(12, dtype=int)
        cfg = context.SelectorTrainConfig(epochs=50, hidden=16, seed=1, n_classes=3)
        net = context.train_selector(d, labels, cfg)
        _, probs = context.select(net, d[0])
        assert probs[0] > 1.0 / 3.0

    def test_orthogonal_one_hot_classes_reach_full_accuracy(self):
        d = np.repeat(np.eye(3), 5, axis=0)
        labels = np.repeat([1, 2, 3], 5)
        cfg = context.SelectorTrainConfig(epochs=200, hidden=32, seed=2)
        net = context.train_selector(d, labels, cfg)
        preds = [context.select(net, row)[0] for row in d]
        assert (np.array(preds) == labels).all()

    def test_cross_entropy_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        net = context.SelectorNetwork(
            w1=rng.normal(0, 0.5, (3, 4)),
            b1=rng.normal(0, 0.1, 4),
            w2=rng.normal(0, 0.5, (4, 2)),
            b2=rng.normal(0, 0.1, 2),
        )
        x = rng.uniform(0.1, 1.0, (5, 3))
        y = np.array([1, 2, 1, 1, 2])

        def pack(n):
            return np.concatenate([n.w1.ravel(), n.b1, n.w2.ravel(), n.b2])

        def unpack(vec):
            n = context.SelectorNetwork(
                w1=vec[:12].reshape(3, 4).copy(),
                b1=vec[12:16].copy(),
                w2=vec[16:24].reshape(4, 2).copy(),
                b2=vec[24:26].copy(),
            )
            return n

        def loss_fn(vec):
            return context.selector_loss_and_grads(unpack(vec), x, y)[0]

        _, (dw1, db1, dw2, db2) = context.selector_loss_and_grads(net, x, y)
        g = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
        fd = central_difference(loss_fn, pack(net), eps=1e-5)
        assert max_relative_error(fd, g) < 1e-4

    def test_training_rejects_bad_labels(self):
        with pytest.raises(ConfigError):
            context.train_selector(
                np.zeros((3, 2)),
                np.array([0, 1, 2]),
                context.SelectorTrainConfig(n_classes=2),
            )


class TestCheckpoint:
    def test_context_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(18)
        cluster = context.ClusterModel(
            centroids=rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64),
            assignments=np.array([1, 2, 3, 1]),
        )
        net = context.SelectorNetwork(
            w1=rng.standard_normal((4, 8)).astype(np.float32).astype(np.float64),
            b1=rng.standard_normal(8).astype(np.float32).astype(np.float64),
            w2=rng.standard_normal((8, 3)).astype(np.float32).astype(np.float64),
            b2=rng.standard_normal(3).astype(np.float32).astype(np.float64),
        )
        path = tmp_path / "ctx.ctxm"
        context.save_context(cluster, net, path)
        cents, net2 = context.load_context(path)
        assert np.allclose(cents, cluster.centroids)
        assert np.allclose(net2.w1, net.w1)
        assert np.allclose(net2.b2, net.b2)

    def test_select_agrees_after_reload(self, tmp_path):
        rng = np.random.default_rng(19)
        d = rng.uniform(0, 1, (10, 4))
        labels = np.array([1, 2] * 5)
        net = context.train_selector(
            d, labels, context.SelectorTrainConfig(epochs=30, hidden=8, seed=3)
        )
        cluster = context.ClusterModel(
            centroids=np.zeros((2, 4)), assignments=labels
        )
        path = tmp_path / "ctx.ctxm"
        context.save_context(cluster, net, path)
        _, net2 = context.load_context(path)
        for row in d:
            assert context.select(net2, row)[0] == context.select(
                context.SelectorNetwork(
                    w1=net.w1.astype(np.float32).astype(np.float64),
                    b1=net.b1.astype(np.float32).astype(np.float64),
                    w2=net.w2.astype(np.float32).astype(np.float64),
                    b2=net.b2.astype(np.float32).astype(np.float64),
                ),
                row,
            )[0]
