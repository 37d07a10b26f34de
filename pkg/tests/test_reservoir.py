import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ristrack.dataio import SyntheticSpec, synthetic_trajectory
from ristrack.metrics import angular_difference
from ristrack.reservoir import (
    InsufficientDataError,
    RegularizationRequiredError,
    ReservoirArch,
    ReservoirModel,
    UntrainedModelError,
    _drive,
    decode_phases,
    encode_phases,
    fit_ridge,
    forecast,
    init_lsm,
    one_step_predictions,
    predict_next,
    run_states,
    spectral_radius,
    train_readout,
    update_state,
    xavier_input_weights,
)
from ristrack.trajectory import PhaseTrajectory

SMALL = dict(n_layers=2, neurons_per_layer=30, connectivity=0.2)


def sinusoid(T=150, M=16, seed=2024):
    return synthetic_trajectory(SyntheticSpec(T=T, n_elements=M), seed)


def ridge_gradient(W, X, Y, lam):
    return 2 * (W @ X.T @ X - Y.T @ X + lam * W)


class TestArch:
    def test_defaults(self):
        a = ReservoirArch()
        assert (a.n_layers, a.neurons_per_layer, a.connectivity, a.spectral_radius) == (5, 100, 0.1, 0.9)
        assert a.washout_T0 == 10 and a.ridge_lambda == 1e-6 and a.activation == "tanh"

    @pytest.mark.parametrize("kw", [{"n_layers": 0}, {"neurons_per_layer": 0}, {"connectivity": 0.0},
                                    {"connectivity": 1.5}, {"spectral_radius": 0.0},
                                    {"activation": "relu"}, {"washout_T0": -1}, {"ridge_lambda": -1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ReservoirArch(**kw)

    def test_for_elements(self):
        a = ReservoirArch.for_elements(7, n_layers=2)
        assert a.input_dim == a.output_dim == 14
        assert a.n_features == 2 * 100 + 1


class TestEncoding:
    @given(st.lists(st.floats(0.0, 2 * np.pi, exclude_max=True), min_size=1, max_size=8))
    def test_round_trip(self, phases):
        phases = np.array([phases])
        back = decode_phases(encode_phases(phases))
        np.testing.assert_allclose(np.abs(angular_difference(back, phases)), 0.0, atol=1e-12)

    def test_pairs_unit_norm(self):
        enc = encode_phases(np.random.default_rng(0).uniform(0, 7, (5, 4)))
        np.testing.assert_allclose(enc[:, :4] ** 2 + enc[:, 4:] ** 2, 1.0, atol=1e-12)

    def test_decode_renormalises(self):
        assert decode_phases(np.array([3.0, 3.0]))[0] == pytest.approx(np.pi / 4)


class TestXavier:
    @pytest.mark.parametrize("fan_in", [1, 64])
    def test_variance(self, fan_in):
        w = xavier_input_weights(fan_in, 1000, 100, 0)
        assert abs(w.mean()) < 0.02
        assert w.var() == pytest.approx(1 / fan_in, rel=0.03)

    def test_zero_fan_in(self):
        with pytest.raises(ValueError):
            xavier_input_weights(0, 2, 2, 0)

    def test_deterministic(self):
        np.testing.assert_array_equal(xavier_input_weights(4, 3, 3, 7), xavier_input_weights(4, 3, 3, 7))


class TestInit:
    def test_spectral_radius(self):
        model = init_lsm(ReservoirArch(), "xavier", 0)
        for W in model.W_res:
            assert spectral_radius(W) == pytest.approx(0.9, abs=1e-6)

    def test_spectral_radius_by_power_iteration(self):
        # independent check: growth rate of ||W^k x|| for large k
        W = init_lsm(ReservoirArch(n_layers=1, neurons_per_layer=60, connectivity=0.3), "xavier", 1).W_res[0]
        x = np.random.default_rng(0).standard_normal(60)
        norms = []
        for _ in range(400):
            x = W @ x
            n = np.linalg.norm(x)
            norms.append(n)
            x = x / n
        assert np.exp(np.mean(np.log(norms[200:]))) == pytest.approx(0.9, abs=0.02)

    def test_dense_connectivity(self):
        model = init_lsm(ReservoirArch(n_layers=1, neurons_per_layer=20, connectivity=1.0), "xavier", 0)
        assert np.count_nonzero(model.W_res[0]) == 400

    def test_sparsity(self):
        model = init_lsm(ReservoirArch(n_layers=1, neurons_per_layer=200), "xavier", 0)
        assert np.count_nonzero(model.W_res[0]) / 200 ** 2 == pytest.approx(0.1, abs=0.01)

    def test_input_widths(self):
        arch = ReservoirArch.for_elements(4, **SMALL)
        m = init_lsm(arch, "xavier", 3)
        assert m.W_in[0].shape == (30, 8) and m.W_in[1].shape == (30, 30)
        assert init_lsm(arch, "uniform_random", 3).W_in[0].max() <= 1.0

    def test_deterministic(self):
        arch = ReservoirArch.for_elements(3, **SMALL)
        a, b = init_lsm(arch, "xavier", 5), init_lsm(arch, "xavier", 5)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.W_res + a.W_in, b.W_res + b.W_in))

    def test_weights_read_only(self):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "xavier", 0)
        with pytest.raises(ValueError):
            m.W_res[0][0, 0] = 1.0

    def test_no_rescale(self):
        m = init_lsm(ReservoirArch(n_layers=1, neurons_per_layer=50, rescale=False), "xavier", 0)
        assert spectral_radius(m.W_res[0]) != pytest.approx(0.9, abs=1e-3)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            init_lsm(ReservoirArch(), "he", 0)


class TestUpdate:
    def scalar_model(self, activation="tanh"):
        arch = ReservoirArch(n_layers=1, neurons_per_layer=1, input_dim=1, output_dim=2, activation=activation)
        return ReservoirModel(arch, [np.array([[1.0]])], [np.array([[0.5]])], "xavier", 0)

    def test_scalar(self):
        (x,) = update_state(self.scalar_model(), [np.zeros(1)], np.ones(1))
        assert x[0] == pytest.approx(0.761594, abs=1e-6)

    def test_softsign(self):
        (x,) = update_state(self.scalar_model("softsign"), [np.array([2.0])], np.ones(1))
        assert x[0] == pytest.approx(2.0 / 3.0)

    def test_zero_fixed_point(self):
        m = init_lsm(ReservoirArch.for_elements(3, **SMALL), "xavier", 0)
        new = update_state(m, [np.zeros(30)] * 2, np.zeros(6))
        assert all(not x.any() for x in new)

    def test_series_cascade(self):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "xavier", 0)
        u = np.ones(4)
        x1, x2 = update_state(m, [np.zeros(30)] * 2, u)
        np.testing.assert_allclose(x2, np.tanh(m.W_in[1] @ x1))

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_bounded(self, seed):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "uniform_random", seed)
        rng = np.random.default_rng(seed)
        # encoded inputs live in [-1, 1]; far larger ones saturate tanh to exactly 1.0 in float64
        states = update_state(m, [rng.uniform(-1, 1, 30)] * 2, rng.uniform(-1, 1, 4))
        assert all(np.all(np.abs(x) < 1) for x in states)

    def test_dimension_errors(self):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "xavier", 0)
        with pytest.raises(ValueError):
            update_state(m, [np.zeros(30)] * 2, np.zeros(5))
        with pytest.raises(ValueError):
            update_state(m, [np.zeros(30)], np.zeros(4))


class TestRunStates:
    def test_constant_input_settles(self):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "xavier", 0)
        X = run_states(m, np.tile(encode_phases(np.array([[0.3, 1.2]])), (300, 1)))
        assert np.linalg.norm(X[-1] - X[-2]) < 1e-6

    def test_short_sequence(self):
        m = init_lsm(ReservoirArch.for_elements(1, **SMALL), "xavier", 0)
        with pytest.raises(InsufficientDataError):
            run_states(m, np.zeros((10, 2)))
        assert run_states(m, np.zeros((11, 2))).shape == (11, 60)

    def test_deterministic(self):
        m = init_lsm(ReservoirArch.for_elements(2, **SMALL), "xavier", 0)
        seq = encode_phases(sinusoid(40, 2).phases)
        assert run_states(m, seq).tobytes() == run_states(m, seq).tobytes()


class TestRidge:
    def test_planted_recovery(self):
        rng = np.random.default_rng(0)
        X = np.hstack([rng.uniform(-1, 1, (80, 20)), np.ones((80, 1))])
        W_true = rng.normal(size=(6, 21))
        W, _ = fit_ridge(X, X @ W_true.T, 0.0)
        assert np.sqrt(np.mean((X @ W.T - X @ W_true.T) ** 2)) < 1e-8

    def test_gradient_vanishes(self):
        rng = np.random.default_rng(1)
        X, Y = rng.normal(size=(50, 12)), rng.normal(size=(50, 3))
        for lam in (1e-6, 0.1, 10.0):
            W, _ = fit_ridge(X, Y, lam)
            assert np.linalg.norm(ridge_gradient(W, X, Y, lam)) < 1e-8 * np.linalg.norm(Y.T @ X)

    def test_dual_form_matches(self):
        rng = np.random.default_rng(2)
        X, Y = rng.normal(size=(10, 40)), rng.normal(size=(10, 3))
        W, dual = fit_ridge(X, Y, 0.5)
        assert dual
        primal = np.linalg.solve(X.T @ X + 0.5 * np.eye(40), X.T @ Y).T
        np.testing.assert_allclose(W, primal, atol=1e-10)

    def test_large_lambda_shrinks(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(30, 5)), rng.normal(size=(30, 2))
        W, _ = fit_ridge(X, Y, 1e12)
        assert np.max(np.abs(W)) < 1e-9

    def test_singular_requires_lambda(self):
        X = np.ones((10, 3))
        with pytest.raises(RegularizationRequiredError):
            fit_ridge(X, np.ones((10, 1)), 0.0)


class TestTraining:
    def setup_method(self):
        self.traj = sinusoid(100, 4)
        self.arch = ReservoirArch.for_elements(4, **SMALL)

    def test_only_readout_written(self):
        m = init_lsm(self.arch, "xavier", 0)
        before = [w.tobytes() for w in m.W_in + m.W_res]
        t = train_readout(m, self.traj)
        assert [w.tobytes() for w in t.W_in + t.W_res] == before
        assert t.trained and not m.trained
        assert t.W_out.shape == (8, self.arch.n_features)

    def test_matches_closed_form(self):
        m = init_lsm(self.arch, "xavier", 0)
        t = train_readout(m, self.traj, 0.7)
        enc = encode_phases(self.traj.phases)
        X = run_states(m, enc)
        rows = np.arange(11, 70)
        F = np.hstack([X[rows - 1], np.ones((rows.size, 1))])
        Y = enc[rows]
        expected = Y.T @ F @ np.linalg.inv(F.T @ F + 1e-6 * np.eye(F.shape[1]))
        np.testing.assert_allclose(t.W_out, expected, atol=1e-6)

    def test_diagnostics(self):
        t = train_readout(init_lsm(self.arch, "xavier", 0), self.traj, 0.7)
        d = t.diagnostics
        assert d["n_train"] == 70 and d["n_rows"] == 59
        assert d["validation_rmse"] > 0 and d["train_rmse"] <= d["train_max_error"]

    def test_target_indices(self):
        t = train_readout(init_lsm(self.arch, "xavier", 0), self.traj, 0.7, [5, 20, 20, 21, 69, 80])
        assert t.diagnostics["n_rows"] == 4
        with pytest.raises(InsufficientDataError):
            train_readout(init_lsm(self.arch, "xavier", 0), self.traj, 0.7, [1, 2, 90])

    @pytest.mark.parametrize("frac", [0.0, 1.0])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            train_readout(init_lsm(self.arch, "xavier", 0), self.traj, frac)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            train_readout(init_lsm(self.arch, "xavier", 0), self.traj[:13])

    def test_untrained_predict(self):
        with pytest.raises(UntrainedModelError):
            predict_next(init_lsm(self.arch, "xavier", 0), self.traj)


@pytest.fixture(scope="module")
def trained():
    traj = sinusoid()
    hist = traj[:100]
    model = train_readout(init_lsm(ReservoirArch.for_elements(16), "xavier", 0), hist, 0.7)
    return traj, hist, model


@pytest.fixture(scope="module")
def constant_model():
    traj = PhaseTrajectory(np.tile([0.4, 2.0, 5.5], (100, 1)))
    arch = ReservoirArch.for_elements(3, n_layers=2, neurons_per_layer=50)
    return traj, train_readout(init_lsm(arch, "xavier", 0), traj, 0.7)


class TestPrediction:
    def test_training_span_bounded_by_recorded_error(self, trained):
        _, hist, model = trained
        pred = one_step_predictions(model, hist, 11)[:59]
        err = np.abs(angular_difference(pred, hist.phases[11:70]))
        assert err.max() <= model.diagnostics["train_max_error"] + 1e-12

    def test_one_step_matches_predict_next(self, trained):
        _, hist, model = trained
        pred = one_step_predictions(model, hist, 80)
        np.testing.assert_allclose(pred[5], predict_next(model, hist[:85]), atol=1e-12)

    def test_repeatable(self, trained):
        _, hist, model = trained
        assert predict_next(model, hist).tobytes() == predict_next(model, hist).tobytes()

    def test_sinusoid_median_error(self, trained):
        _, hist, model = trained
        err = np.abs(angular_difference(one_step_predictions(model, hist, 11), hist.phases[11:]))
        assert np.median(err) < 0.05

    def test_forecast_horizon_one(self, trained):
        _, hist, model = trained
        np.testing.assert_allclose(forecast(model, hist, 1).phases[0], predict_next(model, hist))

    def test_forecast_beats_persistence(self, trained):
        traj, hist, model = trained
        fc = forecast(model, hist, 50)
        assert len(fc) == 50 and fc.origin == "synthetic"
        truth = traj.phases[100:]
        ours = np.mean(np.abs(angular_difference(fc.phases, truth)))
        persist = np.mean(np.abs(angular_difference(hist.phases[-1][None], truth)))
        assert ours < persist

    def test_forecast_bad_horizon(self, trained):
        _, hist, model = trained
        with pytest.raises(ValueError):
            forecast(model, hist, 0)


class TestConstantTrajectory:
    def test_validation(self, constant_model):
        _, m = constant_model
        assert m.diagnostics["validation_rmse"] < 1e-6

    def test_forecast_holds(self, constant_model):
        traj, m = constant_model
        fc = forecast(m, traj, 50)
        assert np.max(np.abs(angular_difference(fc.phases, traj.phases[:50]))) < 1e-3


def test_echo_state_contraction():
    m = init_lsm(ReservoirArch.for_elements(2, n_layers=2, neurons_per_layer=50), "xavier", 0)
    enc = encode_phases(sinusoid(500, 2).phases)
    rng = np.random.default_rng(0)
    a, _ = _drive(m, enc, [rng.uniform(-1, 1, 50) for _ in range(2)])
    b, _ = _drive(m, enc)
    assert np.linalg.norm(a[-1] - b[-1]) < 1e-6
    assert np.linalg.norm(a[0] - b[0]) > 1e-2
