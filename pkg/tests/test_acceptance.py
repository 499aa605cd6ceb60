"""End-to-end acceptance suite.

Covers numerical correctness of the propagator against dense oracles,
conservation laws, learning-stack mechanics, sampler statistics, and the
full generate -> optimize -> ensemble-forecast pipeline at desk scale.
The pipeline-level tests share session fixtures because each stage feeds
the next; everything else is independent.
"""

import dataclasses
import math

import numpy as np
import pytest

from qdforecast.dataset import (FULL, POPULATION_ONLY, Sample, make_dataset,
                                slice_windows, split_groups, vectorize)
from qdforecast.ensemble import EnsembleSpec, bootstrap_resample
from qdforecast.hpo import (SearchSpace, TpeState, run_campaign, sa_accept,
                            synthetic_objective, synthetic_space, tpe_split)
from qdforecast.lstm import (LstmNetwork, TrainConfig, backprop_bptt,
                             forward_batch, mse_loss, _param_arrays)
from qdforecast.physmodel import SiteExcitonModel, SpectralDensity, model_preset
from qdforecast.pipeline import RunConfig, run_forecast, run_generate, run_hpo
from qdforecast.tdvp import PropagationConfig, Trajectory, propagate
from qdforecast.units import HBAR

from test_tdvp import dense_reference


# ---------------------------------------------------------------------------
# 1. propagator vs dense matrix-exponential oracle


def test_tdvp_matches_dense_oracle():
    base = model_preset("I")
    model = dataclasses.replace(base, omega_max_cm=1200.0, delta_omega_cm=600.0)
    cfg = PropagationConfig(dt=0.5, t_end=200.0, scheme="two-site", max_bond=32)
    traj = propagate(model, cfg, n_boson_levels=4)
    from qdforecast.physmodel import discretize_bath
    bath = discretize_bath(model)
    # 2 modes/state x 4 levels x 2 electronic states: dense dimension 512
    assert 4 ** 4 * 2 == 512
    ref = dense_reference(model, bath, 4, traj.times)
    got = np.stack([traj.data[:, 0], traj.data[:, 1],
                    traj.data[:, 2], traj.data[:, 3]], axis=1)
    want = np.stack([ref[:, 0, 0].real, ref[:, 1, 1].real,
                     ref[:, 0, 1].real, ref[:, 0, 1].imag], axis=1)
    assert np.max(np.abs(got - want)) < 1e-5


# ---------------------------------------------------------------------------
# 2. conservation suite on a 1 ps desk-scale run


@pytest.fixture(scope="session")
def desk_run():
    cfg = PropagationConfig(dt=0.5, t_end=1000.0, scheme="one-site",
                            max_bond=32, warmup_steps=40)
    return propagate(model_preset("I"), cfg, n_boson_levels=6,
                     n_modes_override=10, diagnostics=True)


class TestConservation:
    def test_trace(self, desk_run):
        traj, _ = desk_run
        assert np.max(np.abs(traj.data[:, 0] + traj.data[:, 1] - 1.0)) < 1e-6

    def test_hermiticity(self, desk_run):
        traj, _ = desk_run
        rho12 = traj.data[:, 2] + 1j * traj.data[:, 3]
        rhos = np.empty((len(traj.times), 2, 2), dtype=complex)
        rhos[:, 0, 0] = traj.data[:, 0]
        rhos[:, 1, 1] = traj.data[:, 1]
        rhos[:, 0, 1] = rho12
        rhos[:, 1, 0] = rho12.conj()
        assert np.max(np.abs(rhos - rhos.conj().transpose(0, 2, 1))) < 1e-12

    def test_norm(self, desk_run):
        _, diag = desk_run
        assert np.max(np.abs(np.array(diag["norms"]) - 1.0)) < 1e-8

    def test_energy_drift(self, desk_run):
        _, diag = desk_run
        e = np.array(diag["energies"])
        assert np.max(np.abs(e - e[0])) < 1e-6


# ---------------------------------------------------------------------------
# 3. decoupled-bath limit: pure Rabi oscillation


def test_rabi_limit():
    model = SiteExcitonModel(delta_e_ev=0.0, v12_ev=0.0124,
                             bath=SpectralDensity(0.0, 200.0),
                             omega_max_cm=1200.0, delta_omega_cm=600.0)
    cfg = PropagationConfig(dt=0.5, t_end=200.0, scheme="two-site", max_bond=8)
    traj = propagate(model, cfg, n_boson_levels=2)
    expected = np.cos(model.v12_ev * traj.times / HBAR) ** 2
    assert np.max(np.abs(traj.data[:, 0] - expected)) < 1e-6
    t_min = traj.times[np.argmin(traj.data[:, 0])]
    assert abs(t_min - np.pi * HBAR / (2 * model.v12_ev)) < 1.0


# ---------------------------------------------------------------------------
# 4. analytic gradients vs central finite differences


def test_lstm_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = LstmNetwork.initialize(3, (8, 8), 3, rng, window_length=5)
    x = rng.normal(size=(4, 5, 3))
    y = rng.normal(size=(4, 3))
    _, grads = backprop_bptt(net, x, y)
    arrays = _param_arrays(net)
    glist = grads.as_list()
    h = 1e-5
    probe_rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(220):
        ai = probe_rng.integers(len(arrays))
        arr, g = arrays[ai], glist[ai]
        idx = tuple(probe_rng.integers(s) for s in arr.shape)
        keep = arr[idx]
        arr[idx] = keep + h
        lp = mse_loss(forward_batch(net, x), y)
        arr[idx] = keep - h
        lm = mse_loss(forward_batch(net, x), y)
        arr[idx] = keep
        fd = (lp - lm) / (2 * h)
        denom = max(abs(fd), abs(g[idx]), 1e-8)
        worst = max(worst, abs(fd - g[idx]) / denom)
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# 5. protocol constants


class TestProtocolConstants:
    def test_window_count(self):
        t = np.arange(300) * 0.5
        series = vectorize(Trajectory(times=t, data=np.column_stack([
            0.5 * np.ones(300), 0.5 * np.ones(300),
            np.zeros(300), np.zeros(300)])), FULL)
        for L in (5, 40, 100):
            assert len(slice_windows(series, L)) == 300 - L

    def test_split_sizes(self):
        samples = [Sample(inputs=np.zeros((2, 1)), target=np.zeros(1), start=i)
                   for i in range(997)]
        ds = split_groups(samples, seed=3)
        n_a = (3 * 997) // 4
        assert len(ds.external) == 997 - n_a
        assert abs(len(ds.train) - 0.7 * n_a) <= 1
        assert len(ds.train) + len(ds.internal) == n_a

    def test_training_defaults(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 50
        assert cfg.max_epochs == 300

    def test_neuron_grid(self):
        space = SearchSpace.paper(350.0)
        assert space.neuron_grid == tuple(range(10, 511, 20))
        assert len(space.neuron_grid) == 26

    def test_campaign_cardinality(self):
        paper = run_campaign(synthetic_space(), "rs", synthetic_objective,
                             n_tasks=20, iters=100, master_seed=0)
        assert paper.n_trials == 2000
        desk_cfg = RunConfig()
        assert desk_cfg.n_tasks * desk_cfg.iters == 100

    def test_ensemble_cardinalities(self):
        assert EnsembleSpec.parse("(TPE-H10)xBT100").n_members == 1000
        assert EnsembleSpec.parse("(RS-H1)xBT50xMC50").n_members == 2500


# ---------------------------------------------------------------------------
# 6. annealing acceptance statistics


def test_sa_acceptance_statistics():
    rng = np.random.default_rng(11)
    n = 100_000
    hits = sum(sa_accept(1.0, 1.0, rng) for _ in range(n))
    assert abs(hits / n - math.exp(-1.0)) < 0.01
    assert all(sa_accept(-x, 1.0, rng) for x in (1e-12, 0.5, 3.0, 1e6))


# ---------------------------------------------------------------------------
# 7. tree-structured Parzen estimator mechanics


class TestTpeMechanics:
    def test_good_set_size(self):
        for n in (4, 10, 21, 40):
            losses = list(np.random.default_rng(n).normal(size=n))
            good, bad = tpe_split(losses, 0.25)
            assert len(good) == math.ceil(0.25 * n)
            assert len(good) + len(bad) == n
            assert max(losses[i] for i in good) <= min(losses[i] for i in bad)

    def test_ei_ordering_matches_density_ratio(self):
        space = synthetic_space()
        state = TpeState(space, gamma=0.25)
        trials = [synthetic_objective(x) for x in (
            space.sample(np.random.default_rng(s)) for s in range(30))]
        dens = state.fit(trials)
        rng = np.random.default_rng(0)
        cands = [space.sample(rng) for _ in range(40)]
        ratios, scores = [], []
        for x in cands:
            l = state.point_density(x, dens[0])
            g = state.point_density(x, dens[1])
            ratios.append(l / g)
            from qdforecast.hpo import tpe_score
            scores.append(tpe_score(l, g, 0.25))
        order = np.argsort(ratios, kind="stable")
        assert np.all(np.diff(np.array(scores)[order]) >= -1e-15)


# ---------------------------------------------------------------------------
# 8. bootstrap resampling statistics


def test_bootstrap_statistics():
    # (3 * 1334) // 4 = 1000 samples end up in the resampled pool
    samples = [Sample(inputs=np.zeros((2, 1)), target=np.zeros(1), start=i)
               for i in range(1334)]
    ds = split_groups(samples, seed=0)
    m = len(ds.train) + len(ds.internal)
    assert m == 1000
    fractions = []
    for k in range(1000):
        boot = bootstrap_resample(ds, seed=k)
        pool = boot.train + boot.internal
        assert len(pool) == m
        fractions.append(len({s.start for s in pool}) / m)
    expected = 1.0 - (1.0 - 1.0 / m) ** m   # -> 1 - 1/e = 0.632
    assert abs(np.mean(fractions) - expected) < 0.01


# ---------------------------------------------------------------------------
# 9. sampler comparison on the deterministic synthetic objective


@pytest.fixture(scope="module")
def synthetic_campaigns():
    space = synthetic_space()
    return {m: run_campaign(space, m, synthetic_objective,
                            n_tasks=20, iters=100, master_seed=2024)
            for m in ("rs", "sa", "tpe")}


class TestSamplerComparison:
    @pytest.mark.parametrize("method", ["rs", "sa", "tpe"])
    def test_finds_global_minimum(self, synthetic_campaigns, method):
        bests = synthetic_campaigns[method].task_bests
        hits = sum(1 for t in bests if t.loss == 0.0)
        assert hits >= 18

    def test_sa_beats_random_search_early(self, synthetic_campaigns):
        def median_best_at(campaign, it):
            return float(np.median([
                min(t.loss for t in task[:it])
                for task in campaign.tasks]))
        assert (median_best_at(synthetic_campaigns["sa"], 25)
                <= median_best_at(synthetic_campaigns["rs"], 25))


# ---------------------------------------------------------------------------
# 10-12. desk-scale pipeline: forecast quality, feature ablation, history sweep
#
# One smooth low-frequency bath (10 modes/state at 12 cm^-1 spacing, so the
# discrete-bath recurrence lies beyond the 1 ps horizon) feeds an annealing
# campaign and a 30-member bootstrap ensemble.  The 2 fs sampling grid keeps
# the autoregressive rollout at ~325 compounding steps; at 0.5 fs the same
# horizon takes 1300 steps and member phase drift dominates.  The ablation
# and sweep tests reuse the same trajectory.

PIPE_CFG = RunConfig(
    model={"preset": "I", "omega_max_cm": 120.0, "delta_omega_cm": 12.0},
    n_modes=None, n_boson_levels=6, scheme="one-site", dt_fs=2.0,
    history_fs=350.0, hpo_method="sa", n_tasks=3, iters=8,
    ensemble_label="(SA-H3)xBT10", master_seed=42,
    train={"max_epochs": 1000},
)


@pytest.fixture(scope="session")
def pipeline_dirs(tmp_path_factory):
    return tmp_path_factory.mktemp("pipeline")


@pytest.fixture(scope="session")
def trajectory_path(pipeline_dirs):
    return run_generate(PIPE_CFG, pipeline_dirs / "gen")


@pytest.fixture(scope="session")
def campaign_log(pipeline_dirs, trajectory_path):
    _, log_path = run_hpo(PIPE_CFG, trajectory_path, pipeline_dirs / "hpo")
    return log_path


@pytest.fixture(scope="session")
def desk_forecast(pipeline_dirs, trajectory_path, campaign_log):
    return run_forecast(PIPE_CFG, trajectory_path, campaign_log,
                        pipeline_dirs / "forecast")


@pytest.fixture(scope="session")
def reference_series(trajectory_path):
    return vectorize(Trajectory.from_csv(trajectory_path), FULL)


class TestDeskScaleForecast:
    def test_max_error(self, desk_forecast):
        _, summary = desk_forecast
        assert summary["n_members"] == 30
        assert summary["max_abs_err"] < 0.05

    def test_band_coverage(self, desk_forecast, reference_series):
        forecast, _ = desk_forecast
        n_hist = len(reference_series) - len(forecast.times)
        ref = reference_series.values[n_hist:, 0]
        lo = forecast.mean[:, 0] - 2 * forecast.std[:, 0]
        hi = forecast.mean[:, 0] + 2 * forecast.std[:, 0]
        coverage = np.mean((ref >= lo) & (ref <= hi))
        assert coverage >= 0.80


def test_population_only_widens_band(pipeline_dirs, trajectory_path,
                                     campaign_log, desk_forecast):
    pop_cfg = dataclasses.replace(PIPE_CFG, feature_mode=POPULATION_ONLY)
    _, pop_summary = run_forecast(pop_cfg, trajectory_path, campaign_log,
                                  pipeline_dirs / "forecast-pop")
    _, full_summary = desk_forecast
    assert pop_summary["mean_ci_width"] > full_summary["mean_ci_width"]


def test_short_history_degrades_forecast(pipeline_dirs, trajectory_path,
                                         desk_forecast):
    short_cfg = dataclasses.replace(PIPE_CFG, history_fs=200.0)
    _, log200 = run_hpo(short_cfg, trajectory_path, pipeline_dirs / "hpo200")
    _, s200 = run_forecast(short_cfg, trajectory_path, log200,
                           pipeline_dirs / "forecast200")
    _, s350 = desk_forecast
    assert s200["mean_abs_err"] >= s350["mean_abs_err"]
    assert s200["mean_ci_width"] >= s350["mean_ci_width"]
