import csv
import logging

import numpy as np
import pytest

from tripneighbors.domain import Dataset, Entity, EntityKey
from tripneighbors.errors import EvaluationIncompleteError, TripPredictionError
from tripneighbors.evaluate import (
    CurvePoint, FixedSource, NMFConfig, SweepResult, SyntheticSource, experiment_augment, experiment_mixed,
    experiment_nmf_ablation, experiment_per_L, mse, plot_sweep, self_only_predictions, sweep_neighbors,
    write_results, write_summary,
)
from tripneighbors.ingest import merge_datasets
from tripneighbors.synth import SynthParams, generate

from conftest import entity, trip


def small_synth(seed=1, L=4, n=40, **kw):
    return generate(SynthParams(seed=seed, L_values=(L,), n_entities=n, **kw))[0]


class TestMse:
    def test_perfect(self):
        ds = Dataset((entity("a", [1.0, 2.0], test=3.0),))
        assert mse({ds.keys[0]: trip(3.0, yday=3)}, ds) == 0.0

    def test_two_term_mean(self):
        ds = Dataset((entity("a", [0.0, 0.0], test=0.0), entity("b", [0.0, 0.0], test=0.0)))
        preds = {ds.keys[0]: trip(0.0), ds.keys[1]: trip(0.0, 0.001, 0.0, 0.001)}
        assert mse(preds, ds) == pytest.approx(1e-6, rel=1e-12)

    def test_subset(self):
        short = Dataset((entity("s", [0.0, 0.0], test=1.0),))
        long = Dataset((entity("l", [0.0] * 4, test=5.0),))
        merged = merge_datasets(short, long)
        preds = {k: trip(0.0) for k in merged.keys}
        assert mse(preds, merged, subset=short.keys) == 1.0
        assert mse(preds, merged) == 13.0

    def test_missing_prediction(self):
        ds = Dataset((entity("a", [1.0, 2.0], test=3.0),))
        with pytest.raises(EvaluationIncompleteError) as err:
            mse({}, ds)
        assert err.value.key == ds.keys[0]

    def test_missing_test_trip(self):
        ds = Dataset((entity("a", [1.0, 2.0]),))
        with pytest.raises(EvaluationIncompleteError, match="test trip"):
            mse({ds.keys[0]: trip(1.0)}, ds)


class TestSweepResult:
    def test_summary(self):
        curve = tuple(CurvePoint(k, 3, float(k), e) for k, e in enumerate([4.0, 3.0, 2.0, 2.0, 5.0]))
        s = SweepResult({}, curve).summary
        assert (s.self_only_mse, s.nearest_neighbor_mse, s.oracle_k, s.oracle_mse) == (4.0, 3.0, 2, 2.0)
        assert s.improvement == 0.5

    def test_non_contiguous(self):
        with pytest.raises(ValueError):
            SweepResult({}, (CurvePoint(0, 1, 0, 1.0), CurvePoint(2, 1, 0, 1.0)))


class TestSweep:
    def test_single_entity_flat(self):
        ds = Dataset((entity("a", [1.0, 2.0, 2.0, 4.0], test=2.0),))
        res = sweep_neighbors(ds, "all2all", k_max=4)
        assert len({p.mse for p in res.curve}) == 1
        assert all(p.mean_used_k == 0 for p in res.curve)

    def test_k_max_zero_is_self_only(self):
        ds = small_synth()
        res = sweep_neighbors(ds, "ordered", k_max=0)
        assert len(res.curve) == 1
        assert res.summary.self_only_mse == mse(self_only_predictions(ds), ds)
        assert res.summary.nearest_neighbor_mse is None

    def test_oracle_bounds(self):
        res = sweep_neighbors(small_synth(), "all2all", k_max=10)
        s = res.summary
        assert s.oracle_mse <= s.self_only_mse and s.oracle_mse <= s.nearest_neighbor_mse
        assert s.oracle_mse == min(p.mse for p in res.curve)

    def test_mean_used_k_shows_capping(self):
        res = sweep_neighbors(small_synth(n=10), "all2all", k_max=20)
        assert res.curve[-1].mean_used_k < 20
        assert [p.mean_used_k for p in res.curve] == sorted(p.mean_used_k for p in res.curve)

    def test_ordered_mixed_lengths_rejected(self):
        ds = merge_datasets(small_synth(L=2, n=5), Dataset(tuple(
            entity(f"z{i}", [0.0] * 4, test=0.0) for i in range(3))))
        with pytest.raises(TripPredictionError):
            sweep_neighbors(ds, "ordered", k_max=2)

    def test_thread_independence(self):
        ds = small_synth(n=60)
        base = sweep_neighbors(ds, "all2all", k_max=8)
        for threads in (4, 8):
            assert sweep_neighbors(ds, "all2all", k_max=8, threads=threads) == base

    def test_config_fields(self):
        res = sweep_neighbors(small_synth(L=6), "ordered", k_max=3, experiment_id="x")
        c = res.config
        assert (c["experiment_id"], c["variant"], c["L"], c["nmf_r"], c["k_max"]) == ("x", "ordered", "6", 0, 3)
        assert c["error_space"] == "original"

    def test_nmf_sweep_is_well_formed(self):
        ds = small_synth(L=6)
        for space in ("original", "embedding"):
            res = sweep_neighbors(ds, "all2all", k_max=5, nmf=NMFConfig(r=4, error_space=space))
            assert res.config["nmf_r"] == 4 and res.config["error_space"] == space
            assert all(np.isfinite(p.mse) and p.mse >= 0 for p in res.curve)


class TestExperiments:
    def test_per_L_odd_skips_ordered(self, caplog):
        source = SyntheticSource(SynthParams(seed=3, n_entities=20))
        with caplog.at_level(logging.WARNING):
            results = experiment_per_L(source, [3], ["ordered", "all2all"], k_max=3)
        assert [r.variant for r in results] == ["all2all"]
        assert "skipping ordered variant for L=3" in caplog.text

    def test_per_L_empty(self):
        assert experiment_per_L(SyntheticSource(SynthParams(seed=3)), [], k_max=3) == []

    def test_per_L_L2_well_formed(self):
        results = experiment_per_L(SyntheticSource(SynthParams(seed=42)), [2], ["all2all"], k_max=30)
        assert len(results) == 1
        assert 0 <= results[0].summary.oracle_k <= 30

    def test_fixed_source(self):
        ds = generate(SynthParams(seed=3, counts={2: 5, 4: 6}))[0]
        results = experiment_per_L(FixedSource(ds), [2, 4], ["all2all"], k_max=2)
        assert [r.curve[0].n_entities for r in results] == [5, 6]

    def test_augment(self, caplog):
        short = small_synth(seed=1, L=2, n=30)
        # synthetic ids restart at syn000000, so give the long pool its own ids
        long = Dataset(tuple(
            Entity(EntityKey("long" + e.key.ticket_id, e.key.wday, e.key.dhour), e.history, e.test_trip)
            for e in small_synth(seed=2, L=8, n=40).entities
        ))
        with caplog.at_level(logging.WARNING):
            results = experiment_augment(short, long, [0, 10, 50], k_max=5, seed=7)
        assert [r.config["n_short"] for r in results] == [10, 30]
        assert [r.curve[0].n_entities for r in results] == [10, 30]
        assert "skipping augmentation with 0" in caplog.text
        assert "capping" in caplog.text

    def test_mixed_reduces_to_single_L(self):
        ds = small_synth(L=4, n=30)
        mixed = experiment_mixed(ds, k_max=6)
        plain = sweep_neighbors(ds, "all2all", k_max=6)
        assert mixed.curve == plain.curve

    def test_mixed_well_formed(self):
        ds = generate(SynthParams(seed=5, counts={3: 20, 4: 20, 5: 20, 6: 20}))[0]
        res = experiment_mixed(ds, counts={3: 10, 4: 10, 5: 10, 6: 10}, k_max=5, seed=1)
        assert res.config["L"] == "mixed" and res.config["lengths"] == "3,4,5,6"
        assert res.curve[0].n_entities == 40

    def test_nmf_ablation_pair(self):
        raw, emb = experiment_nmf_ablation(small_synth(L=6), k_max=4, nmf=NMFConfig(r=3))
        assert raw.config["nmf_r"] == 0 and emb.config["nmf_r"] == 3


def test_output_files(tmp_path):
    res = sweep_neighbors(small_synth(), "all2all", k_max=3, experiment_id="demo")
    write_results([res], tmp_path / "r.csv")
    write_summary([res], tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == ["experiment_id", "variant", "L", "nmf_r", "k", "n_entities", "mean_used_k", "mse"]
    assert [int(r["k"]) for r in rows] == [0, 1, 2, 3]
    assert float(rows[0]["mse"]) == pytest.approx(res.summary.self_only_mse, rel=1e-11)
    summary = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [r["row"] for r in summary] == ["self_only", "nearest", "oracle"]
    plot_sweep(res, tmp_path / "a.svg")
    plot_sweep(res, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_mixed_long_histories_not_worse_than_short():
    # fixed-seed check of the long-versus-short mixed pools; see the decisions ledger
    summaries = {}
    for lengths in ((3, 4, 5, 6), (7, 8, 9, 10)):
        ds = generate(SynthParams(seed=42, counts={L: 100 for L in lengths}))[0]
        summaries[lengths] = experiment_mixed(ds, k_max=30, threads=4).summary
    assert summaries[(7, 8, 9, 10)].oracle_mse <= summaries[(3, 4, 5, 6)].oracle_mse
