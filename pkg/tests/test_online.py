import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onlinepq.core import Codebook, PQConfig
from onlinepq.online import (UpdateBudget, assign_batch, assign_nearest, select_subcodewords,
                             select_subspaces, subcodeword_budget, update_minibatch, update_streaming)
from onlinepq.trainer import train_codebook


def random_codebook(rng, D=8, M=4, K=4, count=2):
    cfg = PQConfig(D, M, K)
    return Codebook(cfg, rng.standard_normal((M, K, D // M)), np.full((M, K), count))


def test_assign_nearest_examples():
    cb = Codebook(PQConfig(1, 1, 2), np.array([[[0.0], [10.0]]]))
    assert assign_nearest([1.0], cb, 0) == (0, 1.0)
    assert assign_nearest([5.0], cb, 0) == (0, 25.0)


def test_assign_nearest_matches_linear_scan():
    rng = np.random.default_rng(0)
    cb = Codebook(PQConfig(3, 1, 16), rng.standard_normal((1, 16, 3)))
    for _ in range(1000):
        x = rng.standard_normal(3)
        errs = [float(np.sum((x - z) ** 2)) for z in cb.codewords[0]]
        k = min(range(16), key=lambda j: (errs[j], j))
        got_k, got_e = assign_nearest(x, cb, 0)
        assert got_k == k and got_e == pytest.approx(errs[k], rel=1e-12)


def test_streaming_fresh_cell_takes_point():
    cb = Codebook(PQConfig(2, 1, 2), np.array([[[0.0, 0.0], [100.0, 100.0]]]), [[0, 5]])
    code, _ = update_streaming(cb, [1.5, -2.0])
    assert code.tolist() == [0]
    assert cb.codewords[0, 0].tolist() == [1.5, -2.0] and cb.counts[0, 0] == 1


def test_streaming_mean_of_two():
    cb = Codebook(PQConfig(1, 1, 2), np.array([[[0.0], [50.0]]]), [[1, 1]])
    update_streaming(cb, [2.0])
    assert cb.counts[0, 0] == 2 and cb.codewords[0, 0, 0] == 1.0


def test_single_cell_running_mean():
    rng = np.random.default_rng(1)
    init = rng.standard_normal((5, 4))
    cfg = PQConfig(4, 2, 2)
    cb = train_codebook(init[:1], cfg)
    cb.codewords[:, 1, :] = 1e9  # unreachable, so cell 0 acts as the only cell
    seen = [init[0]]
    for x in rng.standard_normal((200, 4)) * 3:
        update_streaming(cb, x)
        seen.append(x)
    mean = np.mean(seen, axis=0).reshape(2, 2)
    assert np.allclose(cb.codewords[:, 0, :], mean, rtol=1e-12, atol=1e-12)
    assert cb.counts[:, 0].tolist() == [201, 201]
    assert cb.counts[:, 1].tolist() == [0, 0]


def test_minibatch_b1_bit_identical_to_streaming():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = random_codebook(rng)
        b = a.copy()
        for x in rng.standard_normal((10, 8)):
            code, _ = update_streaming(a, x)
            rep = update_minibatch(b, x[None, :])
            assert np.array_equal(rep.codes[0], code)
        assert a.identical(b)


def test_budget_saturation_bit_identical():
    rng = np.random.default_rng(3)
    base = random_codebook(rng, D=12, M=4, K=8)
    X = rng.standard_normal((64, 12))
    results = []
    for budget in (UpdateBudget.full(), UpdateBudget.subspaces(4), UpdateBudget.subcodewords(1.0)):
        cb = base.copy()
        update_minibatch(cb, X, budget)
        results.append(cb)
    assert results[0].identical(results[1]) and results[0].identical(results[2])


def test_two_cluster_batch_matches_weighted_mean():
    cfg = PQConfig(2, 1, 2)
    z_old = np.array([[[0.0, 0.0], [10.0, 10.0]]])
    cb = Codebook(cfg, z_old, [[2, 2]])
    X = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0], [9.0, 11.0], [12.0, 9.0]])
    rep = update_minibatch(cb, X)
    assert rep.codes[:, 0].tolist() == [0, 0, 0, 1, 1]
    for k, members in ((0, X[:3]), (1, X[3:])):
        oracle = (2 * z_old[0, k] + members.sum(0)) / (2 + len(members))
        assert np.allclose(cb.codewords[0, k], oracle, rtol=1e-12)
    assert cb.counts.tolist() == [[5, 4]]


def test_minibatch_report_consistency_and_codes_from_pre_update():
    rng = np.random.default_rng(4)
    cb = random_codebook(rng, D=8, M=4, K=6)
    before = cb.copy()
    X = rng.standard_normal((50, 8))
    rep = update_minibatch(cb, X)
    codes, errs = assign_batch(before, X)
    assert np.array_equal(rep.codes, codes)
    assert np.allclose(rep.per_subspace_error, rep.per_cell_error.sum(1), rtol=1e-9)
    assert np.array_equal(cb.totals() - before.totals(), np.full(4, 50, dtype=np.uint64))
    assert rep.per_subspace_error == pytest.approx(errs.sum(0))


def test_empty_batch_is_noop():
    rng = np.random.default_rng(5)
    cb = random_codebook(rng)
    before = cb.copy()
    rep = update_minibatch(cb, np.zeros((0, 8)))
    assert rep.codes.shape == (0, 4) and cb.identical(before)


def test_select_subspaces_examples():
    assert set(select_subspaces([5, 1, 9, 2], 2).tolist()) == {2, 0}
    assert set(select_subspaces([5, 1, 9, 2], 4).tolist()) == {0, 1, 2, 3}
    assert select_subspaces(np.ones(8), 4).tolist() == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_subspaces([1, 2], 3)


def test_select_subcodewords_examples():
    errs = {(0, 0): 4.0, (0, 1): 1.0, (1, 0): 3.0, (1, 1): 2.0}
    assert set(select_subcodewords(errs, 0.5, 2, 2)) == {(0, 0), (1, 0)}
    assert set(select_subcodewords(errs, 1.0, 2, 2)) == set(errs)
    assert select_subcodewords(errs, 0.0, 2, 2) == []
    # ties in lexicographic order; untouched cells never chosen
    assert select_subcodewords({(1, 0): 1.0, (0, 1): 1.0}, 1.0, 2, 2) == [(0, 1), (1, 0)]
    assert subcodeword_budget(0.01, 2, 2) == 1
    assert subcodeword_budget(0.29, 10, 10) == 29


def test_lambda_zero_leaves_codebook_unchanged():
    rng = np.random.default_rng(6)
    cb = random_codebook(rng)
    before = cb.copy()
    rep = update_minibatch(cb, rng.standard_normal((20, 8)), UpdateBudget.subcodewords(0.0))
    assert cb.identical(before) and not rep.updated.any()
    assert rep.codes.shape == (20, 4)


def test_partial_budget_leaves_unselected_cells_untouched():
    rng = np.random.default_rng(7)
    cb = random_codebook(rng, D=16, M=8, K=4)
    before = cb.copy()
    rep = update_minibatch(cb, rng.standard_normal((30, 16)), UpdateBudget.subspaces(3))
    assert len(rep.updated_subspaces) == 3
    untouched = ~rep.updated
    assert np.array_equal(cb.counts[untouched], before.counts[untouched])
    assert np.array_equal(cb.codewords[untouched], before.codewords[untouched])
    top = set(np.argsort(-rep.per_subspace_error, kind="stable")[:3].tolist())
    assert set(rep.updated_subspaces.tolist()) == top


def test_subcodeword_budget_counts_selected_cells():
    rng = np.random.default_rng(8)
    cb = random_codebook(rng, D=16, M=8, K=16)
    rep = update_minibatch(cb, rng.standard_normal((200, 16)), UpdateBudget.subcodewords(0.25))
    assert rep.updated.sum() == min(32, (rep.cell_counts > 0).sum())
    chosen = rep.per_cell_error[rep.updated].min()
    skipped = rep.per_cell_error[(rep.cell_counts > 0) & ~rep.updated]
    assert skipped.size == 0 or skipped.max() <= chosen


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7))
def test_alpha_budget_monotone(seed, alpha):
    rng = np.random.default_rng(seed)
    base = random_codebook(rng, D=16, M=8, K=4)
    X = rng.standard_normal((40, 16))
    small, large = base.copy(), base.copy()
    r1 = update_minibatch(small, X, UpdateBudget.subspaces(alpha))
    r2 = update_minibatch(large, X, UpdateBudget.subspaces(alpha + 1))
    if len(set(r1.per_subspace_error.tolist())) == 8:
        assert not (r1.updated & ~r2.updated).any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_lambda_budget_monotone(seed, lam):
    rng = np.random.default_rng(seed)
    base = random_codebook(rng, D=8, M=4, K=8)
    X = rng.standard_normal((40, 8))
    r1 = update_minibatch(base.copy(), X, UpdateBudget.subcodewords(lam))
    r2 = update_minibatch(base.copy(), X, UpdateBudget.subcodewords(min(1.0, lam + 0.1)))
    touched = r1.per_cell_error[r1.cell_counts > 0]
    if len(set(touched.tolist())) == touched.size:
        assert not (r1.updated & ~r2.updated).any()


def test_budget_parse():
    assert UpdateBudget.parse("full") == UpdateBudget.full()
    assert UpdateBudget.parse("subspace:4") == UpdateBudget.subspaces(4)
    cb = random_codebook(np.random.default_rng(0), D=8, M=4, K=4)
    before = cb.copy()
    with pytest.raises(ValueError):
        update_minibatch(cb, np.ones((3, 8)), UpdateBudget.subspaces(5))
    assert cb.identical(before)
    assert UpdateBudget.parse("subcode:0.5") == UpdateBudget.subcodewords(0.5)
    for bad in ("subspace:0", "subcode:1.5", "subspace:x", "half"):
        with pytest.raises(ValueError):
            UpdateBudget.parse(bad)
    assert str(UpdateBudget.parse("subcode:0.5")) == "subcode:0.5"
