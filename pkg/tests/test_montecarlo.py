"""Replication engine: fast path vs public-API replay, determinism, reports."""

import dataclasses
import json

import numpy as np
import pytest

from cluster_infer import (
    ConfigurationError,
    DegenerateSuperblockError,
    DependenceKind,
    DgpConfig,
    EmptyInputError,
    ExcessiveFailureError,
    Heterogeneity,
    McConfig,
    UDistribution,
    constancy_config,
    rmse_config,
    run_constancy,
    run_estimator_rmse,
    run_size_power,
    size_power_config,
    summarize,
)
from cluster_infer import montecarlo as mc
from cluster_infer.montecarlo import (
    _check_failures,
    _reference_constancy,
    _reference_size_power,
    _worker_constancy,
    _worker_size_power,
)


def _small_size_power_cfg(reps=100, workers=1, beta_alt=(1.0, 1.6)):
    dgp = DgpConfig(
        G=5,
        k=2,
        beta=(1.0, 0.5),
        dependence=DependenceKind("strong"),
        seed=11,
        large_cluster_sizes=(30,),
        small_size_range=(8, 12),
    )
    return McConfig(dgp=dgp, reps=reps, beta_alt=beta_alt, workers=workers)


def _small_constancy_cfg(reps=100, workers=1, scale=0.2):
    dgp = DgpConfig(
        G=12,
        k=2,
        beta=(1.0, 2.0),
        dependence=DependenceKind("strong"),
        seed=12,
        small_size_range=(8, 12),
        heterogeneity=Heterogeneity((4, 4, 4), UDistribution("uniform", scale)),
    )
    return McConfig(dgp=dgp, reps=reps, workers=workers)


def test_fast_path_agrees_with_public_api_replay():
    # the vectorized engine and a per-replication walk through the public
    # estimators must produce the same statistics to near machine precision
    cfg = _small_size_power_cfg()
    fast = _worker_size_power(cfg, 0, 12)
    slow = _reference_size_power(cfg, 0, 12)
    assert sorted(fast) == sorted(slow)
    for key in fast:
        denom = np.maximum(np.abs(slow[key]), 1.0)
        assert np.max(np.abs(fast[key] - slow[key]) / denom) < 1e-8


@pytest.mark.filterwarnings("ignore:3 superblocks")  # tiny blocks by design
def test_fast_path_agrees_for_constancy():
    cfg = _small_constancy_cfg()
    fast = _worker_constancy(cfg, 0, 10)
    slow = _reference_constancy(cfg, 0, 10)
    assert sorted(fast) == sorted(slow)
    for key in fast:
        denom = np.maximum(np.abs(slow[key]), 1.0)
        assert np.max(np.abs(fast[key] - slow[key]) / denom) < 1e-8


def test_reported_rates_are_probabilities():
    report = run_size_power(_small_size_power_cfg(reps=120))
    assert report.protocol == "size-power"
    assert report.reps_used + report.failures == report.reps == 120
    for m in report.methods.values():
        for v in (m.size, m.power, m.size_corrected_power):
            assert 0.0 <= v <= 1.0
        assert m.critical_value_empirical > 0
    assert set(report.methods) == {"cluster-average", "pols"}


def test_size_only_run_leaves_power_fields_empty():
    report = run_size_power(_small_size_power_cfg(beta_alt=None))
    for m in report.methods.values():
        assert m.power is None
        assert m.mc_se_power is None
        assert m.size_corrected_power is None
    # and the text renderer leaves those cells blank
    text = summarize([report])
    assert "cluster-average.power" in text


def _assert_same_rates(a, b):
    # rejection rates must match to the byte; the empirical critical value
    # is an order statistic of the simulated nulls, whose last bits can move
    # with the matrix shapes the batching hands to the BLAS kernels
    assert sorted(a.methods) == sorted(b.methods)
    for name in a.methods:
        ma, mb = a.methods[name], b.methods[name]
        for field in ("size", "mc_se_size", "power", "mc_se_power",
                      "size_corrected_power"):
            va, vb = getattr(ma, field), getattr(mb, field)
            assert (va is None and vb is None) or va == vb
        assert ma.critical_value_asymptotic == mb.critical_value_asymptotic
        np.testing.assert_allclose(
            ma.critical_value_empirical, mb.critical_value_empirical, rtol=1e-12
        )
    assert (a.reps_used, a.failures) == (b.reps_used, b.failures)
    assert a.design_checksum == b.design_checksum


def test_worker_split_is_invisible_in_the_rates():
    a = run_size_power(_small_size_power_cfg(reps=150, workers=1))
    b = run_size_power(_small_size_power_cfg(reps=150, workers=2))
    _assert_same_rates(a, b)


def test_worker_split_is_invisible_for_constancy():
    a = run_constancy(_small_constancy_cfg(reps=150, workers=1))
    b = run_constancy(_small_constancy_cfg(reps=150, workers=2))
    _assert_same_rates(a, b)


def test_chunk_size_is_invisible_in_the_rates(monkeypatch):
    cfg = _small_size_power_cfg(reps=130)
    base = run_size_power(cfg)
    monkeypatch.setattr(mc, "_CHUNK_SCALARS", 1)  # one replication per chunk
    tiny = run_size_power(cfg)
    _assert_same_rates(base, tiny)


def test_statistics_kept_only_on_request_and_not_serialized():
    cfg = _small_size_power_cfg(reps=110)
    plain = run_size_power(cfg)
    assert plain.statistics is None
    kept = run_size_power(cfg, keep_statistics=True)
    assert sorted(kept.statistics) == ["avg_alt", "avg_null", "pols_alt", "pols_null"]
    assert all(arr.shape == (110,) for arr in kept.statistics.values())
    assert "statistics" not in kept.to_dict()
    # identical draws: the null statistics cannot depend on keep_statistics
    assert plain.methods["pols"].size == kept.methods["pols"].size


def test_config_validation():
    with pytest.raises(ConfigurationError, match="reps"):
        _small_size_power_cfg(reps=50)
    with pytest.raises(ConfigurationError, match="level"):
        McConfig(dgp=_small_size_power_cfg().dgp, reps=100, level=0.0)
    with pytest.raises(ConfigurationError, match="workers"):
        _small_size_power_cfg(workers=0)
    dgp = _small_size_power_cfg().dgp
    with pytest.raises(ConfigurationError, match="beta_null"):
        McConfig(dgp=dgp, reps=100, beta_null=(1.0,))
    with pytest.raises(ConfigurationError, match="beta_alt"):
        McConfig(dgp=dgp, reps=100, beta_alt=(1.0, 2.0, 3.0))


def test_constancy_needs_testable_blocks():
    dgp = DgpConfig(
        G=4, k=2, beta=(1.0, 2.0), dependence=DependenceKind("strong"), seed=3,
        small_size_range=(8, 10),
    )
    with pytest.raises(ConfigurationError, match="heterogeneity"):
        run_constancy(McConfig(dgp=dgp, reps=100))
    lonely = dataclasses.replace(
        dgp, heterogeneity=Heterogeneity((1, 3), UDistribution("uniform", 0.2))
    )
    with pytest.raises(DegenerateSuperblockError) as ei:
        run_constancy(McConfig(dgp=lonely, reps=100))
    assert ei.value.labels == ["b0"]


def test_constancy_size_and_power_from_one_frozen_design():
    report = run_constancy(_small_constancy_cfg(reps=150), keep_statistics=True)
    assert report.protocol == "constancy"
    assert set(report.methods) == {"superblock-constancy"}
    m = report.methods["superblock-constancy"]
    assert 0.0 <= m.size <= 1.0 and 0.0 <= m.power <= 1.0
    assert sorted(report.statistics) == ["z_alt", "z_null"]
    # the perturbations only add signal, so power cannot trail size by much;
    # with this scale the shift is large and the ordering is strict
    assert m.power > m.size
    assert report.params == {"P": 4, "D": 3}


def test_constancy_degenerate_u_gives_size_only():
    dgp = _small_constancy_cfg().dgp
    dgp = dataclasses.replace(
        dgp, heterogeneity=Heterogeneity((4, 4, 4), UDistribution("degenerate"))
    )
    report = run_constancy(McConfig(dgp=dgp, reps=100))
    m = report.methods["superblock-constancy"]
    assert m.power is None and m.size_corrected_power is None


def test_level_one_rejects_everything():
    cfg = dataclasses.replace(_small_size_power_cfg(reps=100), level=1.0)
    full = run_size_power(cfg)
    for m in full.methods.values():
        assert m.size == 1.0 and m.power == 1.0
        assert m.critical_value_empirical == m.critical_value_asymptotic


def test_failure_accounting_thresholds():
    cfg = _small_size_power_cfg(reps=200)
    ok = np.ones(200, dtype=bool)
    ok[:2] = False  # exactly 1%: tolerated
    used, failures = _check_failures(cfg, ok)
    assert (used, failures) == (198, 2)
    ok[2] = False  # 1.5%: too many
    with pytest.raises(ExcessiveFailureError, match="3 of 200"):
        _check_failures(cfg, ok)


def test_rmse_protocol_shape_and_determinism():
    cfg = rmse_config(G=6, reps=150)
    rep1 = run_estimator_rmse(cfg)
    rep2 = run_estimator_rmse(cfg)
    assert rep1.rmse == rep2.rmse
    assert sorted(rep1.rmse) == ["cluster-average", "pols"]
    assert all(v > 0 for v in rep1.rmse.values())
    assert len(rep1.rmse_by_component["cluster-average"]) == 1
    d = rep1.to_dict()
    assert d["params"] == {"G": 6, "N1": 36}
    moving = dataclasses.replace(cfg.dgp, regenerate_X_per_rep=True)
    with pytest.raises(ConfigurationError, match="frozen design"):
        run_estimator_rmse(dataclasses.replace(cfg, dgp=moving))


def test_factory_configs_match_protocol_documentation():
    sp = size_power_config(G=25, N1=100, reps=100)
    assert sp.dgp.large_cluster_sizes == (100,)
    assert sp.dgp.k == 2 and sp.dgp.dependence.variant == "strong"
    assert sp.beta_null == (1.0, 0.5) and sp.beta_alt == (1.0, 1.6)
    cc = constancy_config(P=4, D=3, u_dist=UDistribution("uniform", 0.2), reps=100)
    assert cc.dgp.G == 12
    assert cc.dgp.heterogeneity.block_sizes == (4, 4, 4)
    rc = rmse_config(G=10, reps=100)
    assert rc.dgp.large_cluster_sizes == (100,)
    assert rc.dgp.k == 1
    assert rc.dgp.heterogeneity.block_sizes == (1,) * 10


def test_summarize_formats_and_ordering():
    fast = run_size_power(_small_size_power_cfg(reps=100))
    # a second design with a different cluster count, fed out of order
    big = dataclasses.replace(
        _small_size_power_cfg(reps=100).dgp, G=7
    )
    other = run_size_power(McConfig(dgp=big, reps=100, beta_alt=(1.0, 1.6)))
    text = summarize([other, fast])
    lines = text.strip().splitlines()
    assert lines[0].split()[:2] == ["protocol", "G"]
    assert lines[1].split()[1] == "5" and lines[2].split()[1] == "7"
    csv_text = summarize([other, fast], fmt="csv")
    assert csv_text.splitlines()[0].startswith("protocol,G,N1,P,D,")
    parsed = json.loads(summarize([other, fast], fmt="json"))
    assert [r["params"]["G"] for r in parsed] == [5, 7]
    with pytest.raises(EmptyInputError):
        summarize([])
    with pytest.raises(ConfigurationError, match="unknown summary format"):
        summarize([fast], fmt="yaml")


def test_mixed_protocol_summary_keeps_sections_apart():
    sp = run_size_power(_small_size_power_cfg(reps=100))
    cc = run_constancy(_small_constancy_cfg(reps=100))
    text = summarize([cc, sp])
    lines = text.strip().splitlines()
    assert lines[1].split()[0] == "size-power"
    assert lines[2].split()[0] == "constancy"
    assert "superblock-constancy.size" in lines[0]
