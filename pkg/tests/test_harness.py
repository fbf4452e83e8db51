import io
import json
import math

import numpy as np
import pytest

from hybridfilter.ensemble import InvalidParameterError
from hybridfilter.harness import (
    FilterSettings,
    HenonConfig,
    L96RunConfig,
    WeightedSample,
    aggregate_trials,
    desk_preset,
    henon_config_from_dict,
    henon_prior,
    paper_preset,
    reference_posterior,
    run_henon_experiment,
    run_l96_cycled,
    substream,
    write_summary,
)
from hybridfilter.models import L96Config
from hybridfilter.particle import ScalarObservations


def small_config(method="ESRF", **kw):
    params = FilterSettings(inflation=0.05, localization=20.0, ess_target=10.0 if method != "ESRF" else None)
    base = dict(
        model=L96Config(J=4), method=method, N=20, params=params,
        n_cycles=6, burn_in=2, spinup=1.0, cycle_interval=0.3, master_seed=7,
    )
    base.update(kw)
    return L96RunConfig(**base)


def test_substreams_are_independent_and_reproducible():
    a = substream(1, "truth", 3).random(4)
    np.testing.assert_array_equal(a, substream(1, "truth", 3).random(4))
    assert not np.array_equal(a, substream(1, "obs", 3).random(4))
    assert not np.array_equal(a, substream(1, "truth", 4).random(4))
    assert not np.array_equal(a, substream(2, "truth", 3).random(4))


def test_henon_prior_shape_and_moments(rng):
    X = henon_prior(200_000, rng)
    assert X.shape == (2, 200_000)
    # U1 = 1 - 1.4 U0^2 + V0 has mean 1 - 1.4; V1 = 0.3 U0 has variance 0.09
    assert X[0].mean() == pytest.approx(-0.4, abs=0.02)
    assert X[1].var() == pytest.approx(0.09, rel=0.02)


def test_reference_posterior_is_normalized(rng):
    obs = ScalarObservations([-4.0, 0.6], [0, 1], [1.0, 0.01])
    ref = reference_posterior(henon_prior(5000, rng), obs)
    assert isinstance(ref, WeightedSample)
    assert ref.weights.sum() == pytest.approx(1.0)
    assert ref.mean().shape == (2,) and np.all(ref.crps([-4.0, 0.6]) >= 0)


def test_henon_experiment_small_and_deterministic():
    cfg = HenonConfig(n_trials=4, ensemble_size=30, ess_targets=(10, 20), reference_size=2000, master_seed=3)
    a = run_henon_experiment(cfg)
    b = run_henon_experiment(cfg, jobs=2)
    assert a.csv_text() == b.csv_text()
    methods = {row["method"] for row in a.rows}
    assert methods == {"SIR", "ESRF", "SIR-ESRF", "reference"}
    entry = a.lookup("SIR-ESRF", 20)
    assert abs(entry["mean_ess"] - 20) <= 1.0 + 1e-9
    assert a.lookup("SIR")["mean_ess"] < 30


def test_henon_config_validation():
    with pytest.raises(InvalidParameterError):
        HenonConfig(ess_targets=(1,))
    with pytest.raises(ValueError, match="unknown config key 'trials'"):
        henon_config_from_dict({"trials": 3})
    assert henon_config_from_dict({"n_trials": 5}).n_trials == 5


def test_l96_run_is_deterministic():
    a = run_l96_cycled(small_config())
    b = run_l96_cycled(small_config())
    assert a.status == "ok" and len(a.records) == 12
    assert a.csv_text() == b.csv_text()
    assert a.csv_text().splitlines()[0] == "cycle,phase,rmse,spread,mean_crps,alpha,ess"


def test_methods_share_truth_and_initial_ensemble():
    esrf = run_l96_cycled(small_config("ESRF"))
    hyb = run_l96_cycled(small_config("SIR-ESRF"))
    # the first forecast is identical because it depends only on truth and init streams
    assert esrf.records[0] == hyb.records[0]
    assert esrf.records[1] != hyb.records[1]
    assert 0 < hyb.records[1]["alpha"] <= 1


def test_blurred_hybrid_runs():
    res = run_l96_cycled(small_config("BSIR-ESRF"))
    assert res.status == "ok"
    s = res.summary()
    assert abs(s["mean_ess"] - 10) <= 1.0 + 1e-9 and math.isfinite(s["median_log10_alpha"])


def test_zero_cycles_gives_empty_run():
    res = run_l96_cycled(small_config(n_cycles=0, burn_in=0))
    assert res.status == "ok" and res.records == []
    assert math.isnan(res.summary()["analysis_rmse"])


def test_accurate_dense_observations_pin_the_analysis():
    cfg = small_config(model=L96Config(J=1), obs_stride=1, gamma2=1e-8, N=60,
                       params=FilterSettings(), n_cycles=3, burn_in=0)
    res = run_l96_cycled(cfg)
    analysis = [r for r in res.records if r["phase"] == "analysis"]
    assert all(r["rmse"] < 1e-3 for r in analysis)


def test_observer_sees_each_analysis():
    seen = []
    run_l96_cycled(small_config(), observer=lambda c, rec: seen.append(c))
    assert seen == list(range(6))


def test_blowup_is_reported():
    cfg = small_config(model=L96Config(J=4, F=1e5), cycle_interval=1.0)
    res = run_l96_cycled(cfg)
    assert res.status == "blowup" and "blew up" in res.failure


def test_config_round_trip_and_errors():
    cfg = desk_preset("BSIR-ESRF")
    assert L96RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="unknown config key"):
        L96RunConfig.from_dict({"model": {"J": 32, "K": 3}})
    with pytest.raises(InvalidParameterError):
        L96RunConfig(method="EnKF")
    with pytest.raises(InvalidParameterError):
        L96RunConfig(method="SIR-ESRF")
    with pytest.raises(InvalidParameterError):
        L96RunConfig(obs_stride=5)


def test_presets():
    assert desk_preset().model.n == 1312 and desk_preset().n_cycles == 300
    full = paper_preset("SIR-ESRF", 400)
    assert full.model.n == 5248 and full.params.ess_target == 297.0
    assert full.hybrid_params().blur is None
    assert paper_preset("BSIR-ESRF", 400).hybrid_params().blur.m == 1312


def test_aggregate_and_summary_file(tmp_path):
    results = [run_l96_cycled(small_config(), trial=t) for t in range(2)]
    agg = aggregate_trials(results)
    assert agg["n_trials"] == 2 and agg["n_failed"] == 0
    path = tmp_path / "summary.json"
    write_summary(path, {"agg": agg, "x": np.float64(1.5), "config": small_config()})
    loaded = json.loads(path.read_text())
    assert loaded["x"] == 1.5 and loaded["config"]["N"] == 20
