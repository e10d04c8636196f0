import numpy as np
import pytest

from tripneighbors.domain import Dataset
from tripneighbors.errors import DegenerateInputError, NonNegativityError, RankError
from tripneighbors.ingest import group_entities, parse_csv
from tripneighbors.nmf import (
    FeatureMatrix, build_feature_matrix, embed_trips, entity_embeddings, factorize_cached,
    load_factorization, nmf_factorize, save_factorization, transform,
)

from conftest import entity


def random_matrix(n=50, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, 4))


def assert_monotone(trace):
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


class TestFeatureMatrix:
    def test_shape(self):
        ds = Dataset((entity("a", [1.0, 2.0, 3.0]), entity("b", [4.0, 5.0, 6.0])))
        assert build_feature_matrix(ds).shape == (6, 4)

    def test_sample_row(self, sample_stream):
        ds = group_entities(parse_csv(sample_stream), L=3)
        fm = build_feature_matrix(ds)
        key = next(k for k in ds.keys if k.ticket_id == "tid000001")
        assert fm.rows[fm.row_index[(key, 0)]].tolist() == [6.160129, 48.698788, 6.178392, 48.693237]

    def test_negative_named(self):
        ds = Dataset((entity("a", [1.0, -2.0]),))
        with pytest.raises(NonNegativityError, match="row 1"):
            build_feature_matrix(ds)

    def test_min_shift(self):
        ds = Dataset((entity("a", [1.0, -2.0]),))
        fm = build_feature_matrix(ds, min_shift=True)
        assert fm.shift == 2.0
        assert fm.rows.min() == 0.0
        assert fm.rows[0].tolist() == [3.0, 2.0, 2.0, 2.0]

    def test_direct_construction_validates(self):
        with pytest.raises(NonNegativityError):
            FeatureMatrix(np.array([[1.0, -1.0, 0.0, 0.0]]), {})


class TestFactorize:
    def test_rank_one_exact(self):
        u = np.array([1.0, 2.0, 3.0, 0.5, 4.0])[:, None]
        v = np.array([[2.0, 1.0, 0.5, 3.0]])
        x = u @ v
        tol = 1e-6
        fact = nmf_factorize(x, r=1, max_iters=2000, tol=1e-12)
        assert np.linalg.norm(x - fact.W @ fact.H) < tol * np.linalg.norm(x)

    def test_identical_rows(self):
        x = np.tile([6.1, 48.6, 6.2, 48.7], (7, 1))
        fact = nmf_factorize(x, r=1)
        recon = fact.W @ fact.H
        assert np.all(np.abs(recon - recon[0]) <= 1e-6)

    def test_random_trace(self):
        fact = nmf_factorize(random_matrix(), r=4, seed=3)
        assert_monotone(fact.objective_trace)
        assert fact.objective_trace[-1] <= fact.objective_trace[0]
        assert (fact.W >= 0).all() and (fact.H >= 0).all()

    def test_embedding_distances_finite(self):
        fact = nmf_factorize(random_matrix(), r=4, seed=3)
        w = fact.W
        d = ((w[:, None, :] - w[None, :, :]) ** 2).sum(-1)
        assert np.isfinite(d).all() and (d >= 0).all()

    def test_identical_trips_identical_embeddings(self):
        ds = Dataset((entity("a", [1.0, 1.0, 1.0]), entity("b", [1.0, 1.0])))
        fact = nmf_factorize(build_feature_matrix(ds), r=2)
        rows = np.array(list(embed_trips(fact).values()))
        assert (rows == rows[0]).all()

    def test_orthogonal_columns_recovered(self):
        x = np.diag([1.0, 2.0, 3.0, 4.0])
        x = np.vstack([x, 2 * x])
        exact = 0
        for seed in range(6):
            fact = nmf_factorize(x, r=4, max_iters=5000, tol=1e-14, seed=seed)
            if fact.objective_trace[-1] > 1e-9:
                # multiplicative updates can zero a component and stall there
                continue
            exact += 1
            w = fact.W
            support = (w > 1e-6 * w.max(axis=1, keepdims=True)).sum(axis=1)
            assert (support == 1).all()
            assert np.allclose(w[4:], 2 * w[:4], rtol=1e-6)
        assert exact >= 1

    def test_seed_determinism(self):
        a = nmf_factorize(random_matrix(), r=3, seed=9)
        b = nmf_factorize(random_matrix(), r=3, seed=9)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.H, b.H)
        assert a.objective_trace == b.objective_trace

    def test_rank_too_large(self):
        with pytest.raises(RankError):
            nmf_factorize(random_matrix(), r=5)

    def test_rank_zero(self):
        with pytest.raises(RankError):
            nmf_factorize(random_matrix(), r=0)

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            nmf_factorize(np.zeros((3, 4)), r=2)

    @pytest.mark.parametrize("kw", [{"max_iters": 0}, {"tol": 0.0}])
    def test_bad_params(self, kw):
        with pytest.raises(ValueError):
            nmf_factorize(random_matrix(), r=2, **kw)


def test_entity_embeddings_in_history_order():
    ds = Dataset((entity("a", [1.0, 2.0, 3.0]), entity("b", [4.0, 5.0])))
    fact = nmf_factorize(build_feature_matrix(ds), r=2)
    emb = entity_embeddings(fact)
    assert emb[ds.keys[0]].shape == (3, 2)
    assert np.array_equal(emb[ds.keys[1]][1], embed_trips(fact)[(ds.keys[1], 1)])


def test_transform_reproduces_fitted_rows():
    x = random_matrix(30)
    fact = nmf_factorize(x, r=4, max_iters=3000, tol=1e-12)
    w = transform(fact, x[:5], max_iters=5000, tol=1e-14)
    assert np.linalg.norm(w @ fact.H - x[:5]) <= np.linalg.norm(fact.W[:5] @ fact.H - x[:5]) * 1.01 + 1e-9


def test_cache_round_trip(tmp_path):
    ds = Dataset((entity("a", [1.0, 2.0, 3.0]), entity("b", [4.0, 5.0])))
    fm = build_feature_matrix(ds)
    first = factorize_cached(fm, r=2, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("nmf-*.npz"))) == 1
    second = factorize_cached(fm, r=2, cache_dir=tmp_path)
    assert np.array_equal(first.W, second.W)
    assert second.row_index == first.row_index
    save_factorization(tmp_path / "f.npz", first)
    third = load_factorization(tmp_path / "f.npz")
    assert third.objective_trace == first.objective_trace
