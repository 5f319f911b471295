import math

import numpy as np
import pytest

from progsynth.gp import (GpFactorizationError, GpLikelihood, KernelError,
                          LOG_LIK_BOUND, Standardization, TimeSeries, cov_eval,
                          cov_matrix, gp_grammar, gp_heldout_loglik, gp_loglik,
                          gp_predict, validate_kernel)
from progsynth.grammar import check_consistency, sample, validate
from progsynth.sexpr import parse


def naive_mvn_loglik(cov, ys):
    """Dense-inverse multivariate normal log density (independent oracle)."""
    n = len(ys)
    inv = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * ys @ inv @ ys - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


def random_series(rng, n, span=10.0):
    xs = np.sort(rng.uniform(0, span, size=n))
    ys = rng.normal(0, 2.0, size=n)
    return TimeSeries(xs, ys)


# ---------------------------------------------------------------------------
# grammar instance

def test_gp_grammar_valid_and_consistent():
    g = gp_grammar()
    assert validate(g).ok
    report = check_consistency(g)
    assert report.consistent
    assert report.spectral_radius == pytest.approx(0.78512481, abs=1e-6)


def test_gp_rule_probabilities_sum_to_one():
    g = gp_grammar()
    total = sum(r.prob for r in g.rules_by_lhs["K"])
    assert total == pytest.approx(1.0, abs=1e-12)


def test_sampled_programs_satisfy_arity_invariants():
    g = gp_grammar()
    rng = np.random.default_rng(17)
    for _ in range(10_000):
        validate_kernel(sample(g, "K", rng))


# ---------------------------------------------------------------------------
# covariance semantics

def test_lin_denotation():
    assert cov_eval(parse("(lin (gamma 1.2))"), 2.0, 3.0) == \
        pytest.approx((2 - 1.2) * (3 - 1.2), abs=1e-12)


def test_wn_denotation():
    k = parse("(wn (gamma 0.7))")
    assert cov_eval(k, 1.5, 1.5) == pytest.approx(0.7)
    assert cov_eval(k, 1.5, 1.6) == 0.0


def test_per_zero_lag():
    assert cov_eval(parse("(per (gamma 2) (gamma 5))"), 3.3, 3.3) == \
        pytest.approx(1.0)


def test_per_denotation_formula():
    v1, v2, x, x2 = 2.0, 5.0, 1.0, 2.5
    want = math.exp(-2 / v1 * math.sin(2 * math.pi / v2 * abs(x - x2)) ** 2)
    assert cov_eval(parse("(per (gamma 2) (gamma 5))"), x, x2) == \
        pytest.approx(want, abs=1e-12)


def test_se_denotation_formula():
    assert cov_eval(parse("(se (gamma 4))"), 1.0, 3.0) == \
        pytest.approx(math.exp(-4 / 4), abs=1e-12)


def test_sum_product_denotations_pointwise():
    rng = np.random.default_rng(3)
    g = gp_grammar()
    for _ in range(50):
        k1 = sample(g, "K", rng)
        k2 = sample(g, "K", rng)
        x, x2 = rng.uniform(-5, 5, size=2)
        c1, c2 = cov_eval(k1, x, x2), cov_eval(k2, x, x2)
        assert cov_eval(parse(f"(+ {k1} {k2})"), x, x2) == \
            pytest.approx(c1 + c2, abs=1e-12, rel=1e-12)
        assert cov_eval(parse(f"(* {k1} {k2})"), x, x2) == \
            pytest.approx(c1 * c2, abs=1e-12, rel=1e-12)


def test_cp_blends_to_either_side():
    # the blend weight 0.5*(1+tanh(10(x-v))) saturates once |10(x-v)| >= 20,
    # selecting the first kernel right of the change point and the second
    # kernel left of it
    k = parse("(cp (gamma 5) (lin (gamma 1)) (se (gamma 2)))")
    k1 = parse("(lin (gamma 1))")
    k2 = parse("(se (gamma 2))")
    for x, x2 in [(7.5, 8.0), (7.2, 9.6)]:
        assert cov_eval(k, x, x2) == pytest.approx(cov_eval(k1, x, x2), abs=1e-6)
    for x, x2 in [(1.0, 2.0), (0.5, 2.9)]:
        assert cov_eval(k, x, x2) == pytest.approx(cov_eval(k2, x, x2), abs=1e-6)


def test_cov_matrix_single_const():
    m = cov_matrix(parse("(const (gamma 1))"), np.array([4.2]))
    assert m.shape == (1, 1)
    assert m[0, 0] == pytest.approx(1.01)


def test_cov_matrix_exact_symmetry_and_cholesky():
    g = gp_grammar()
    rng = np.random.default_rng(11)
    for _ in range(1000):
        k = sample(g, "K", rng)
        n = int(rng.integers(1, 51))
        xs = rng.uniform(-10, 10, size=n)
        m = cov_matrix(k, xs)
        assert np.array_equal(m, m.T)
        np.linalg.cholesky(m)


def test_duplicate_x_jitter_is_shared():
    m = cov_matrix(parse("(const (gamma 2))"), np.array([1.0, 1.0, 3.0]))
    assert m[0, 1] == pytest.approx(2.01)
    assert m[0, 2] == pytest.approx(2.0)


def test_kernel_validation_catches_malformed_programs():
    with pytest.raises(KernelError):
        validate_kernel(parse("(per (gamma 1))"))
    with pytest.raises(KernelError):
        validate_kernel(parse("(const (gamma -1))"))
    with pytest.raises(KernelError):
        validate_kernel(parse("(+ (lin (gamma 1)))"))
    with pytest.raises(KernelError):
        validate_kernel(parse("(zap (gamma 1))"))


# ---------------------------------------------------------------------------
# likelihood

def test_scalar_gaussian_loglik():
    ts = TimeSeries(np.array([0.0]), np.array([0.0]))
    want = -0.5 * math.log(2 * math.pi * 1.01)
    assert gp_loglik(parse("(const (gamma 1))"), ts) == pytest.approx(want, abs=1e-12)


def test_loglik_matches_naive_dense_inverse():
    g = gp_grammar()
    rng = np.random.default_rng(23)
    for _ in range(200):
        k = sample(g, "K", rng)
        ts = random_series(rng, int(rng.integers(1, 21)))
        want = naive_mvn_loglik(cov_matrix(k, ts.xs), ts.ys)
        assert gp_loglik(k, ts) == pytest.approx(want, abs=1e-8)


def test_likelihood_bound():
    g = gp_grammar()
    rng = np.random.default_rng(31)
    for _ in range(1000):
        k = sample(g, "K", rng)
        ts = random_series(rng, int(rng.integers(1, 21)))
        assert gp_loglik(k, ts) <= LOG_LIK_BOUND + 1e-9
    assert LOG_LIK_BOUND == pytest.approx(math.log(10.0))


def test_duplicate_x_with_wn_degenerates():
    ts = TimeSeries(np.array([1.0, 1.0]), np.array([0.3, -0.2]))
    with pytest.raises(GpFactorizationError):
        gp_loglik(parse("(wn (gamma 1))"), ts)
    assert GpLikelihood().loglik(parse("(wn (gamma 1))"), ts) == -math.inf


# ---------------------------------------------------------------------------
# prediction

def test_wn_posterior_mean_shrinkage():
    # probing a wn kernel at its single training point: the cross covariance
    # is v, the train variance v + jitter, so the mean shrinks by v/(v+0.01)
    v, y = 0.8, 1.7
    train = TimeSeries(np.array([2.0]), np.array([y]))
    pred = gp_predict(parse(f"(wn (gamma {v}))"), train, np.array([2.0]))
    assert pred.mean[0] == pytest.approx(v / (v + 0.01) * y, abs=1e-12)


def test_large_constant_kernel_mean_approaches_sample_mean():
    rng = np.random.default_rng(5)
    train = random_series(rng, 10)
    pred = gp_predict(parse("(const (gamma 10000))"), train, np.array([99.0]))
    target = train.ys.mean()
    assert abs(pred.mean[0] - target) < 0.01 * abs(target)


def test_predictive_cov_symmetric_psd():
    g = gp_grammar()
    rng = np.random.default_rng(8)
    for _ in range(100):
        k = sample(g, "K", rng)
        train = random_series(rng, 12)
        probe = np.linspace(-2, 12, 7)
        pred = gp_predict(k, train, probe)
        assert np.allclose(pred.cov, pred.cov.T, atol=1e-9)
        assert np.linalg.eigvalsh(pred.cov).min() > -1e-9
        assert np.diag(pred.cov).min() >= 0.0


def test_far_probe_variance_is_prior_plus_jitter():
    k = parse("(se (gamma 2))")
    train = TimeSeries(np.array([0.0, 1.0]), np.array([0.5, -0.5]))
    pred = gp_predict(k, train, np.array([1000.0]))
    assert pred.cov[0, 0] == pytest.approx(1.0 + 0.01, abs=1e-8)


def test_chain_rule_factorization():
    g = gp_grammar()
    rng = np.random.default_rng(13)
    for _ in range(50):
        k = sample(g, "K", rng)
        n_train = int(rng.integers(1, 11))
        n_test = int(rng.integers(1, 11))
        xs = rng.uniform(0, 20, size=n_train + n_test)  # distinct a.s.
        ys = rng.normal(0, 1.5, size=n_train + n_test)
        train = TimeSeries(xs[:n_train], ys[:n_train])
        test = TimeSeries(xs[n_train:], ys[n_train:])
        both = TimeSeries(xs, ys)
        lhs = gp_heldout_loglik(k, train, test) + gp_loglik(k, train)
        assert lhs == pytest.approx(gp_loglik(k, both), abs=1e-6)


def test_heldout_on_training_interpolates():
    # scoring points near the training data under a smooth kernel beats
    # scoring far extrapolations
    k = parse("(se (gamma 4))")
    xs = np.linspace(0, 10, 20)
    ys = np.sin(xs)
    train = TimeSeries(xs[::2], ys[::2])
    near = TimeSeries(xs[1::2], ys[1::2])
    far = TimeSeries(xs[1::2] + 100.0, ys[1::2])
    assert gp_heldout_loglik(k, train, near) > gp_heldout_loglik(k, train, far)


def test_standardization_round_trip():
    rng = np.random.default_rng(2)
    ts = random_series(rng, 30)
    std = Standardization.fit(ts)
    scaled = std.apply(ts)
    assert scaled.ys.mean() == pytest.approx(0.0, abs=1e-12)
    assert scaled.ys.std() == pytest.approx(1.0, abs=1e-12)
    assert scaled.xs.min() == pytest.approx(0.0)
    assert scaled.xs.max() == pytest.approx(1.0)
