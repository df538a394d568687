import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annensemble.ensemble import (G_CLAMP, EnsembleError, combine, compute_weight, derive_seed,
                                  run_ensemble)
from annensemble.mlp import NetworkConfig
from annensemble.series import ErrorTriple, SplitSpec, TimeSeries
from annensemble.trainers import TrainerSpec

SPLIT = SplitSpec(40, 10, 10)
CONFIG = NetworkConfig(3, 2)


def toy_series():
    t = np.arange(60)
    return TimeSeries(0.5 + 0.3 * np.sin(2 * np.pi * t / 9) + 0.02 * np.cos(t))


def quick(kind, name=""):
    return TrainerSpec(kind, max_epochs=60, name=name)


# -- weights ------------------------------------------------------------------

def test_weight_unit_sum():
    g, w = compute_weight(ErrorTriple(0.2, 0.3, 0.5))
    assert g == pytest.approx(1.0) and w == pytest.approx(math.e)


def test_weight_zero_errors_clamped():
    g, w = compute_weight(ErrorTriple(0.0, 0.0, 0.0))
    assert g == G_CLAMP and w == math.exp(50)


def test_weight_ratio():
    _, w1 = compute_weight(ErrorTriple(0.0, 0.0, 1.0))
    _, w2 = compute_weight(ErrorTriple(0.0, 0.0, 2.0))
    assert w1 / w2 == pytest.approx(math.exp(0.5))


def test_weight_rejects_negative():
    with pytest.raises(ValueError):
        compute_weight(ErrorTriple(-1.0, 0.0, 1.0))


@given(st.floats(0.021, 1e6), st.floats(0.021, 1e6))
def test_weight_monotone(a, b):
    if a == b:
        return
    wa = compute_weight(ErrorTriple(0, 0, a))[1]
    wb = compute_weight(ErrorTriple(0, 0, b))[1]
    # exp(1/x) can round to equal values for huge errors; never in the wrong order
    assert (wa >= wb) if a < b else (wa <= wb)
    if max(a, b) < 1e3:
        assert (wa > wb) if a < b else (wa < wb)


# -- combine ------------------------------------------------------------------

def test_combine_single():
    np.testing.assert_array_equal(combine([3.7], [[1.0, 2.0]]), [1.0, 2.0])


def test_combine_equal_weights():
    np.testing.assert_array_equal(combine([1, 1], [[0, 0], [2, 4]]), [1, 2])


def test_combine_weighted():
    np.testing.assert_allclose(combine([1, 3], [[0], [4]]), [3])


@pytest.mark.parametrize("w, f", [([1, 1], [[1, 2], [1]]), ([1], [[1], [2]]),
                                  ([1, 0], [[1], [2]]), ([1, -1], [[1], [2]])])
def test_combine_errors(w, f):
    with pytest.raises(ValueError):
        combine(w, f)


def test_combine_brute_force_and_convexity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k, n = int(rng.integers(1, 8)), int(rng.integers(1, 20))
        w = np.exp(rng.uniform(-5, 5, size=k))
        F = rng.normal(scale=10, size=(k, n))
        D = combine(w, F)
        want = [sum(w[i] * F[i, j] for i in range(k)) / sum(w) for j in range(n)]
        np.testing.assert_allclose(D, want, rtol=0, atol=1e-12 * max(1, np.abs(F).max()))
        tol = 1e-12 * np.abs(F).max()
        assert np.all(D >= F.min(axis=0) - tol) and np.all(D <= F.max(axis=0) + tol)


@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=6), st.randoms())
def test_combine_permutation(w, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    F = rng.normal(size=(len(w), 5))
    order = list(range(len(w)))
    rnd.shuffle(order)
    np.testing.assert_allclose(combine(w, F), combine(np.array(w)[order], F[order]),
                               rtol=1e-12, atol=1e-12)


# -- seeds --------------------------------------------------------------------

def test_seed_derivation():
    a = derive_seed(0, "LM", 0, 0)
    assert a == derive_seed(0, "LM", 0, 0)
    others = {derive_seed(0, "LM", 0, 1), derive_seed(0, "LM", 1, 0),
              derive_seed(0, "SCG", 0, 0), derive_seed(1, "LM", 0, 0)}
    assert a not in others and len(others) == 4


# -- full procedure -----------------------------------------------------------

def test_single_trainer_ensemble_equals_trainer():
    res = run_ensemble(toy_series(), SPLIT, CONFIG, [quick("RPROP")], 2, 0)
    np.testing.assert_array_equal(res.combined, res.test_forecasts[0])
    assert res.combined.shape == (10,)


def test_identical_trainers_degenerate():
    with pytest.warns(UserWarning, match="odd"):
        res = run_ensemble(toy_series(), SPLIT, CONFIG, [quick("SCG"), quick("SCG")], 2, 1)
    np.testing.assert_array_equal(res.test_forecasts[0], res.test_forecasts[1])
    np.testing.assert_allclose(res.combined, res.test_forecasts[0], rtol=1e-15)
    assert res.labels == ["SCG", "SCG#2"]


def test_result_structure_and_convexity():
    specs = [quick("RPROP"), quick("SCG"), quick("BFGS")]
    res = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 2, 3)
    F = np.array(res.test_forecasts)
    assert F.shape == (3, 10)
    assert np.all(res.combined >= F.min(axis=0) - 1e-12)
    assert np.all(res.combined <= F.max(axis=0) + 1e-12)
    for ev in res.evaluations:
        assert ev.w == pytest.approx(math.exp(ev.g))
        assert ev.g == pytest.approx(min(G_CLAMP, 1 / ev.validation.total))
    np.testing.assert_allclose(res.combined, combine(res.weights, res.test_forecasts))
    each, comb = res.test_errors()
    assert len(each) == 3 and comb.mse >= 0


def test_permutation_of_specs():
    specs = [quick("RPROP"), quick("SCG"), quick("OSS")]
    a = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 2, 5)
    b = run_ensemble(toy_series(), SPLIT, CONFIG, specs[::-1], 2, 5)
    for i, j in zip(range(3), (2, 1, 0)):
        np.testing.assert_array_equal(a.test_forecasts[i], b.test_forecasts[j])
    np.testing.assert_allclose(a.combined, b.combined, rtol=1e-14)


def test_duplicate_moves_towards_trainer():
    specs = [quick("RPROP"), quick("SCG"), quick("BFGS")]
    base = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 2, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dup = run_ensemble(toy_series(), SPLIT, CONFIG, specs + [quick("SCG")], 2, 7)
    target = base.test_forecasts[1]
    differ = np.abs(base.combined - target) > 1e-12
    assert np.any(differ)
    closer = np.abs(dup.combined - target) < np.abs(base.combined - target)
    assert np.all(closer[differ])


def test_reproducible():
    specs = [quick("LM"), quick("PSO_TRELEA1"), quick("OSS")]
    a = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 2, 11)
    b = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 2, 11)
    np.testing.assert_array_equal(a.combined, b.combined)
    assert [e.seed for e in a.evaluations] == [e.seed for e in b.evaluations]
    assert a.refit_choice == b.refit_choice


def test_warm_start_single_refit():
    res = run_ensemble(toy_series(), SPLIT, CONFIG, [quick("RPROP")], 3, 0, warm_start=True)
    assert res.refit_choice[0]["restart"] == 0


def test_seasonal_ensemble_shapes():
    t = np.arange(72)
    ts = TimeSeries(1 + 0.5 * np.sin(2 * np.pi * t / 6) + 0.01 * t)
    cfg = NetworkConfig.seasonal(6, 2)
    res = run_ensemble(ts, SplitSpec(48, 12, 12), cfg, [quick("RPROP")], 1, 0)
    assert res.combined.shape == (12,) and res.validation_forecasts[0].shape == (12,)


def test_bad_arguments():
    with pytest.raises(EnsembleError):
        run_ensemble(toy_series(), SPLIT, CONFIG, [], 1, 0)
    with pytest.raises(EnsembleError):
        run_ensemble(toy_series(), SPLIT, CONFIG, [quick("LM")], 0, 0)


def test_failed_trainer_dropped():
    # a huge learning rate overflows the loss on every restart
    bad = TrainerSpec("GD_MOMENTUM", {"learning_rate": 1e200}, max_epochs=5, name="bad")
    specs = [bad, quick("RPROP"), quick("SCG")]
    with pytest.warns(UserWarning, match="bad dropped"):
        with np.errstate(all="ignore"):
            res = run_ensemble(toy_series(), SPLIT, CONFIG, specs, 1, 0)
    assert res.dropped == ["bad"] and res.names == ["RPROP", "SCG"]


def test_all_failed_raises():
    bad = TrainerSpec("GD_MOMENTUM", {"learning_rate": 1e200}, max_epochs=5)
    with pytest.raises(EnsembleError, match="every trainer"):
        with np.errstate(all="ignore"):
            run_ensemble(toy_series(), SPLIT, CONFIG, [bad], 1, 0)
