import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _support import policy_draws
from platoongain.dynamics import in_state_space
from platoongain.gainopt import optimize_mu
from platoongain.params import ControllerParams, ICRanges, SpacingPolicy
from platoongain.simulation import spacing_feasible
from platoongain.surrogate import (
    Dataset,
    IncompatibleRangesError,
    MlpModel,
    NormStats,
    TrainConfig,
    TrainingError,
    generate_dataset,
    load_model,
    mlp_eval,
    mlp_forward,
    mlp_train,
    normalize,
    sample_initial_conditions,
    save_model,
    split_indices,
)
from platoongain.surrogate.mlp import loss_and_grads, raw_features, write_history_csv

P = ControllerParams()


def _toy_dataset(count=60, n=3, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    states = [sample_initial_conditions(n, seed=rng) for _ in range(count)]
    speeds = np.array([s.speeds for s in states])
    positions = np.array([s.positions for s in states])
    if labels is None:
        labels = 0.2 + 0.02 * (speeds[:, 0] - 27.0) + 0.01 * (positions[:, 0] - positions[:, -1] - 32)
    return Dataset(speeds, positions, np.asarray(labels, dtype=float), split_indices(count, seed))


class TestSampler:
    def test_predicates_hold(self):
        rng = np.random.default_rng(1)
        pol = SpacingPolicy()
        for _ in range(200):
            s = sample_initial_conditions(7, seed=rng)
            assert in_state_space(s, P) and spacing_feasible(s, pol)
            assert s.positions[0] == 0.0
            assert np.all((s.spacings > 16) & (s.spacings < 24))

    def test_degenerate_ranges(self):
        # the default headway policy needs 21 m at 30 m/s, so relax it to admit 20 m
        s = sample_initial_conditions(4, ICRanges((20.0, 20.0), (30.0, 30.0)),
                                      SpacingPolicy(s_bar=6.0, rho=0.4), seed=3)
        np.testing.assert_array_equal(s.spacings, [20.0, 20.0, 20.0])
        np.testing.assert_array_equal(s.speeds, [30.0] * 4)

    def test_incompatible_policy(self):
        with pytest.raises(IncompatibleRangesError):
            sample_initial_conditions(3, policy=SpacingPolicy(s_bar=30.0), seed=0, max_tries=200)

    def test_speeds_beyond_limit(self):
        with pytest.raises(IncompatibleRangesError):
            sample_initial_conditions(3, ICRanges(speed=(36.0, 40.0)), seed=0, max_tries=50)

    def test_policy_must_clear_minimum_distance(self):
        with pytest.raises(ValueError):
            sample_initial_conditions(3, policy=SpacingPolicy(s_bar=4.0), seed=0)

    def test_seeded(self):
        a = sample_initial_conditions(5, seed=42)
        b = sample_initial_conditions(5, seed=42)
        assert np.array_equal(a.positions, b.positions) and np.array_equal(a.speeds, b.speeds)

    def test_no_policy_draw(self):
        s = sample_initial_conditions(7, policy=None, seed=5)
        assert in_state_space(s, P)


class TestSplit:
    @given(st.integers(100, 3000), st.integers(0, 2 ** 32 - 1))
    def test_partition(self, count, seed):
        sp = split_indices(count, seed)
        joined = np.concatenate([sp["train"], sp["val"], sp["test"]])
        assert np.array_equal(np.sort(joined), np.arange(count))
        assert abs(len(sp["train"]) - 0.85 * count) <= 1
        assert abs(len(sp["val"]) - 0.075 * count) <= 1

    def test_seed_changes_partition(self):
        assert not np.array_equal(split_indices(200, 0)["test"], split_indices(200, 1)["test"])


class TestDataset:
    def test_generation_contract(self, tmp_path):
        a = generate_dataset(100, n=3, seed=4)
        b = generate_dataset(100, n=3, seed=4)
        assert len(a) == 100
        for key in ("speeds", "positions", "mu_star"):
            assert np.array_equal(getattr(a, key), getattr(b, key))
        assert np.all((a.mu_star > 0) & (a.mu_star <= 2))
        assert a.mu_star.std() > 0
        for smp in a.samples[:10]:
            assert in_state_space(smp.state, P) and spacing_feasible(smp.state, SpacingPolicy())
            assert optimize_mu(smp.state, P).mu_star == smp.mu_star
        a.to_csv(tmp_path / "a.csv")
        a.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        back = Dataset.from_csv(tmp_path / "a.csv", split_seed=4)
        assert np.array_equal(back.speeds, a.speeds) and np.array_equal(back.mu_star, a.mu_star)
        for name in ("train", "val", "test"):
            assert np.array_equal(back.split[name], a.split[name])

    def test_too_small(self):
        with pytest.raises(ValueError):
            generate_dataset(99)

    def test_csv_header(self, tmp_path):
        ds = _toy_dataset(n=2)
        ds.to_csv(tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "v1,v2,x1,x2,mu_star"

    @pytest.mark.parametrize("body, line", [
        ("v1,y1,mu_star\n1,2,3\n", 1),
        ("v1,v2,x1,x2,mu_star\n1,2,3,4,5\n1,2,3\n", 3),
        ("v1,v2,x1,x2,mu_star\n1,2,3,4,5\n1,2,x,4,5\n", 3),
    ])
    def test_csv_errors_name_line(self, tmp_path, body, line):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(ValueError, match=f"line {line}"):
            Dataset.from_csv(path)


class TestNormalization:
    def test_feature_midpoint_and_label_min(self):
        stats = NormStats(np.array([16.0]), np.array([24.0]), 0.1, 0.9)
        assert stats.scale_features(np.array([[20.0]]))[0, 0] == 0.5
        assert stats.scale_label(0.1) == 0.0

    def test_degenerate_feature(self):
        stats = NormStats(np.array([3.0, 0.0]), np.array([3.0, 1.0]), 0.0, 1.0)
        out = stats.scale_features(np.array([[3.0, 0.25]]))
        np.testing.assert_array_equal(out, [[0.5, 0.25]])

    @given(arrays(float, (5, 4), elements=st.floats(-100, 100)))
    def test_round_trip(self, x):
        stats = NormStats(np.array([-100.0, -50, 0, 10]), np.array([100.0, 60, 1, 11]), 0.0, 1.0)
        np.testing.assert_allclose(stats.unscale_features(stats.scale_features(x)), x, atol=1e-12)
        y = np.linspace(0.01, 2, 7)
        lab = NormStats(np.zeros(1), np.ones(1), 0.01, 2.0)
        np.testing.assert_allclose(lab.unscale_label(lab.scale_label(y)), y, atol=1e-12)

    def test_fitted_on_training_split_only(self):
        ds = _toy_dataset()
        _, _, stats = normalize(ds)
        tr = ds.split["train"]
        feats = raw_features(ds.speeds[tr], ds.positions[tr])
        np.testing.assert_array_equal(stats.feat_min, feats.min(axis=0))
        assert stats.label_max == ds.mu_star[tr].max()
        feats2, _, same = normalize(ds, stats)
        assert same is stats

    def test_positions_rebased(self):
        f = raw_features([[30, 31]], [[100.0, 80.0]])
        np.testing.assert_array_equal(f, [[30, 31, 0, -20]])


class TestNetwork:
    def test_gradient_check(self):
        rng = np.random.default_rng(0)
        model = MlpModel.init(n=3, h1=2, h2=2, seed=5)
        for p in model.params():
            p += rng.normal(0, 0.3, p.shape)  # non-zero biases, generic ReLU pattern
        feats = rng.uniform(0, 1, (5, 6))
        y = rng.uniform(0, 1, 5)
        _, grads = loss_and_grads(model, feats, y)
        h = 1e-6
        for p, g in zip(model.params(), grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_and_grads(model, feats, y)[0]
                p[idx] = old - h
                down = loss_and_grads(model, feats, y)[0]
                p[idx] = old
                fd = (up - down) / (2 * h)
                assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_zero_model_gives_label_minimum(self):
        model = MlpModel.init(3, 4, 5, stats=NormStats(np.zeros(6), np.ones(6), 0.3, 0.9))
        model.set_params([np.zeros_like(p) for p in model.params()])
        assert mlp_forward(model, [30, 30, 30], [0, -20, -40]) == pytest.approx(0.3)

    @given(arrays(float, (3,), elements=st.floats(-50, 50)))
    def test_branch_isolation(self, delta):
        model = MlpModel.init(3, 8, 6, seed=2)
        feats = np.random.default_rng(1).uniform(0, 1, (4, 6))
        moved = feats.copy()
        moved[:, 3:] += delta
        hs_a, _ = model.branches(feats)
        hs_b, _ = model.branches(moved)
        assert np.array_equal(hs_a, hs_b)
        moved = feats.copy()
        moved[:, :3] += delta
        assert np.array_equal(model.branches(feats)[1], model.branches(moved)[1])

    @given(arrays(float, (2, 4), elements=st.floats(-1e3, 1e3)))
    def test_prediction_domain(self, x):
        model = MlpModel.init(2, 3, 3, seed=7)
        for p in model.params():
            p *= 50.0
        mu = mlp_forward(model, x[:, :2], x[:, 2:])
        assert np.all((mu > 0) & (mu <= 2))

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            mlp_forward(MlpModel.init(3), [30, 30], [0, -20])

    def test_save_load_bit_exact(self, tmp_path):
        ds = _toy_dataset()
        model, _ = mlp_train(ds, 5, 4, TrainConfig(epochs=3))
        save_model(model, tmp_path / "m.txt")
        back = load_model(tmp_path / "m.txt")
        for a, b in zip(model.params(), back.params()):
            assert np.array_equal(a, b)
        for key in ("feat_min", "feat_max"):
            assert np.array_equal(getattr(model.stats, key), getattr(back.stats, key))
        assert (back.stats.label_min, back.stats.label_max) == (model.stats.label_min,
                                                                  model.stats.label_max)
        first = (tmp_path / "m.txt").read_text().splitlines()
        assert first[0] == "3 5 4"
        assert len(first) == 6

    @pytest.mark.parametrize("text, line", [
        ("3 5\n", 1), ("2 1 1\n1 2 3\n", 2), ("2 1 1\n" + "0 " * 10 + "\n1 2 0 0\n", 3),
    ])
    def test_load_errors_name_line(self, tmp_path, text, line):
        path = tmp_path / "m.txt"
        path.write_text(text)
        with pytest.raises(ValueError, match=f"line {line}"):
            load_model(path)


class TestTraining:
    def test_constant_labels_learned(self):
        ds = _toy_dataset(count=400, labels=np.full(400, 0.4))
        model, hist = mlp_train(ds, tc=TrainConfig(epochs=15))
        assert min(row[2] for row in hist) < 1e-3
        assert mlp_forward(model, ds.speeds[0], ds.positions[0]) == 0.4

    def test_plain_descent_option(self):
        ds = _toy_dataset()
        _, hist = mlp_train(ds, 4, 4, TrainConfig(epochs=20, optimizer="sgd", learning_rate=0.05,
                                                  weight_decay=0.0))
        assert hist[-1][1] < hist[0][1]

    def test_determinism_and_best_checkpoint(self):
        ds = _toy_dataset(count=120)
        tc = TrainConfig(epochs=40)
        m1, h1 = mlp_train(ds, 6, 6, tc)
        m2, h2 = mlp_train(ds, 6, 6, tc)
        assert h1 == h2
        assert all(np.array_equal(a, b) for a, b in zip(m1.params(), m2.params()))
        assert len(h1) == 40 and [row[0] for row in h1] == list(range(1, 41))
        val_best, _ = mlp_eval(m1, ds, "val")
        assert val_best <= h1[-1][2] + 1e-15
        assert val_best == pytest.approx(min(r[2] for r in h1), rel=1e-12)

    @pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
    def test_nonfinite_loss_aborts(self):
        ds = _toy_dataset()
        ds.speeds[ds.split["train"][0], 0] = np.inf
        with pytest.raises(TrainingError):
            mlp_train(ds, 3, 3, TrainConfig(epochs=2))

    def test_config_validation(self):
        for kwargs in ({"learning_rate": 0}, {"epochs": 0}, {"batch_size": 0},
                       {"optimizer": "rmsprop"}, {"weight_decay": -1}):
            with pytest.raises(ValueError):
                TrainConfig(**kwargs)

    def test_history_csv(self, tmp_path):
        write_history_csv(tmp_path / "h.csv", [(1, 0.5, 0.25), (2, 0.125, 0.0625)])
        assert (tmp_path / "h.csv").read_text().splitlines() == [
            "epoch,train_mse,val_mse", "1,0.5,0.25", "2,0.125,0.0625"]


class TestEvaluation:
    def test_perfect_model(self):
        ds = _toy_dataset()
        model = MlpModel.init(3, 6, 5, seed=9, stats=normalize(ds)[2])
        ds.mu_star = mlp_forward(model, ds.speeds, ds.positions)
        mse, dev = mlp_eval(model, ds, "test")
        assert mse == pytest.approx(0.0, abs=1e-24) and dev == pytest.approx(0.0, abs=1e-12)

    def test_zero_model_mse_is_second_moment(self):
        rng = np.random.default_rng(3)
        labels = np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 198)])
        ds = _toy_dataset(count=200, labels=labels)
        ds.split["train"] = np.union1d(ds.split["train"], [0, 1])
        _, _, stats = normalize(ds)
        model = MlpModel.init(3, 4, 4, stats=stats)
        model.set_params([np.zeros_like(p) for p in model.params()])
        mse, _ = mlp_eval(model, ds, "test")
        y = ds.mu_star[ds.split["test"]]
        assert mse == pytest.approx(np.mean(y ** 2), rel=1e-12)

    def test_empty_split(self):
        ds = _toy_dataset()
        ds.split["test"] = np.array([], dtype=int)
        with pytest.raises(ValueError):
            mlp_eval(MlpModel.init(3), ds, "test")


def test_trained_surrogate_tracks_optimizer(surrogate_2000):
    model = surrogate_2000["model"]
    dev = np.array([abs(mlp_forward(model, s0.speeds, s0.positions) - optimize_mu(s0, P).mu_star)
                    for s0 in policy_draws(20, seed=2718)])
    assert dev.mean() <= 0.05
    assert np.mean(dev <= 0.05) >= 0.75
