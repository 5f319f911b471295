import itertools
import math

import numpy as np
import pytest

from progsynth.grammar import (DiscreteTerminal, Grammar, Rule,
                               expand_logdensity, prior_logdensity)
from progsynth.sexpr import addresses, parse, print_expr, sever, subexpr
from progsynth.synthesis import (Chain, InitializationError, LikelihoodBoundError,
                                 LikelihoodModel, MoveSchedule, SynthesisConfig,
                                 chain_rng, checked_loglik, filtered_addresses,
                                 initialize, propose, synthesize, transition)


def micro_grammar():
    return Grammar([
        Rule("S", "s", ("K", "K"), 1.0),
        Rule("K", "a", (), 0.5),
        Rule("K", "b", (), 0.5),
    ], start="S")


MICRO_WORDS = ["(s (a) (a))", "(s (a) (b))", "(s (b) (a))", "(s (b) (b))"]


class TableLikelihood(LikelihoodModel):
    """Toy likelihood over an enumerable language."""

    def __init__(self, table, default=0.0):
        self.table = {k: float(v) for k, v in table.items()}
        self.default = default
        self.log_cmax = math.log(max([*table.values(), 1.0]))

    def loglik(self, expr, data):
        v = self.table.get(print_expr(expr), self.default)
        return math.log(v) if v > 0 else -math.inf


class ConstantLikelihood(LikelihoodModel):
    log_cmax = 0.0

    def loglik(self, expr, data):
        return 0.0


def micro_likelihood():
    return TableLikelihood({
        "(s (a) (a))": 1.0,
        "(s (a) (b))": 2.0,
        "(s (b) (a))": 3.0,
        "(s (b) (b))": 4.0,
    })


def _replace_at(e, a, sub):
    # micro-grammar nodes carry no atoms, so args are exactly the children
    if not a:
        return sub
    args = list(e.args)
    args[a[0] - 1] = _replace_at(args[a[0] - 1], a[1:], sub)
    return type(e)(e.tag, tuple(args))


def enumerate_transition_matrix(g, model, data=None):
    """Brute-force T(E -> E'): uniform node choice, prior subtree
    regeneration, MH acceptance; diagonal carries all rejection mass."""
    words = [parse(w) for w in MICRO_WORDS]
    hole_marker = parse("(hole-marker)")
    logliks = {print_expr(w): model.loglik(w, data) for w in words}

    def lik(e):
        return math.exp(logliks[print_expr(e)])

    def alpha(e, e2):
        return min(1.0, (len(addresses(e)) * lik(e2))
                   / (len(addresses(e2)) * lik(e)))

    t = {}
    for e in words:
        a_e = addresses(e)
        off_diagonal = 0.0
        for e2 in words:
            if e2 == e:
                continue
            total = 0.0
            for a in a_e:
                if subexpr(e2, a) is None:
                    continue
                nt_e, _ = sever(e, a, g.tag_owner)
                nt_e2, _ = sever(e2, a, g.tag_owner)
                if nt_e != nt_e2:
                    continue
                if _replace_at(e, a, hole_marker) != _replace_at(e2, a, hole_marker):
                    continue
                regen = math.exp(expand_logdensity(g, nt_e, subexpr(e2, a)))
                total += regen * alpha(e, e2)
            t[(print_expr(e), print_expr(e2))] = total / len(a_e)
            off_diagonal += total / len(a_e)
        t[(print_expr(e), print_expr(e))] = 1.0 - off_diagonal
    return t


def exact_posterior(g, model):
    weights = {}
    for w in MICRO_WORDS:
        e = parse(w)
        weights[w] = math.exp(prior_logdensity(g, e) + model.loglik(e, None))
    z = sum(weights.values())
    return {w: v / z for w, v in weights.items()}


def test_detailed_balance_on_micro_grammar():
    g = micro_grammar()
    model = micro_likelihood()
    t = enumerate_transition_matrix(g, model)
    post = exact_posterior(g, model)
    for e, e2 in itertools.product(MICRO_WORDS, repeat=2):
        lhs = post[e] * t[(e, e2)]
        rhs = post[e2] * t[(e2, e)]
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_transition_rows_sum_to_one():
    g = micro_grammar()
    t = enumerate_transition_matrix(g, micro_likelihood())
    for e in MICRO_WORDS:
        assert sum(t[(e, e2)] for e2 in MICRO_WORDS) == pytest.approx(1.0, abs=1e-9)


def test_irreducibility_single_step():
    g = micro_grammar()
    t = enumerate_transition_matrix(g, micro_likelihood())
    for e, e2 in itertools.product(MICRO_WORDS, repeat=2):
        assert t[(e, e2)] > 0


def test_aperiodicity_bound():
    # self-transition at least (1/|A_E|) * Prior[E]
    g = micro_grammar()
    t = enumerate_transition_matrix(g, micro_likelihood())
    for e in MICRO_WORDS:
        expr = parse(e)
        bound = math.exp(prior_logdensity(g, expr)) / len(addresses(expr))
        assert t[(e, e)] >= bound - 1e-12


def test_chain_occupancy_matches_posterior():
    g = micro_grammar()
    model = micro_likelihood()
    rng = chain_rng(2024, 0)
    expr, ll, lp = initialize(g, model, None, rng)
    chain = Chain(current=expr, loglik=ll, logprior=lp, rng=rng)
    counts = {w: 0 for w in MICRO_WORDS}
    steps = 100_000
    for _ in range(steps):
        transition(chain, g, model, None)
        counts[print_expr(chain.current)] += 1
    post = exact_posterior(g, model)
    tv = 0.5 * sum(abs(counts[w] / steps - post[w]) for w in MICRO_WORDS)
    assert tv < 0.05


def test_constant_likelihood_leaves_prior_invariant():
    g = micro_grammar()
    model = ConstantLikelihood()
    rng = chain_rng(7, 0)
    expr, ll, lp = initialize(g, model, None, rng)
    chain = Chain(current=expr, loglik=ll, logprior=lp, rng=rng)
    counts = {w: 0 for w in MICRO_WORDS}
    steps = 40_000
    for _ in range(steps):
        transition(chain, g, model, None)
        counts[print_expr(chain.current)] += 1
    for w in MICRO_WORDS:
        p = math.exp(prior_logdensity(g, parse(w)))
        se = math.sqrt(p * (1 - p) / steps)
        # autocorrelated samples: allow a generous multiple of the iid SE
        assert abs(counts[w] / steps - p) < 12 * se


def test_initialize_retry_distribution():
    # half the language has zero likelihood -> geometric with mean 2
    g = micro_grammar()
    model = TableLikelihood({"(s (a) (a))": 1.0, "(s (a) (b))": 1.0})

    class CountingModel(LikelihoodModel):
        log_cmax = 0.0

        def __init__(self):
            self.calls = 0

        def loglik(self, expr, data):
            self.calls += 1
            return model.loglik(expr, data)

    counter = CountingModel()
    rng = np.random.default_rng(5)
    trials = 2000
    for _ in range(trials):
        expr, ll, _ = initialize(g, counter, None, rng)
        assert ll > -math.inf
    mean_retries = counter.calls / trials
    assert 1.85 < mean_retries < 2.15


def test_initialize_budget_exhaustion():
    g = micro_grammar()
    model = TableLikelihood({})
    with pytest.raises(InitializationError):
        initialize(g, model, None, np.random.default_rng(0), max_retries=10)


def test_likelihood_bound_guard():
    class Liar(LikelihoodModel):
        log_cmax = 0.0

        def loglik(self, expr, data):
            return 1.0

    with pytest.raises(LikelihoodBoundError):
        checked_loglik(Liar(), parse("(s (a) (a))"), None)


def test_propose_acceptance_ratio_two_leaf_grammar():
    g = Grammar([Rule("K", "a", (), 0.5), Rule("K", "b", (), 0.5)], start="K")
    model = TableLikelihood({"(a)": 1.0, "(b)": 3.0})
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(200):
        prop = propose(g, model, None, parse("(a)"), model.loglik(parse("(a)"), None),
                       rng)
        if print_expr(prop.expr) == "(b)":
            assert prop.log_accept_ratio == pytest.approx(math.log(3.0))
            seen.add("a->b")
        prop = propose(g, model, None, parse("(b)"), model.loglik(parse("(b)"), None),
                       rng)
        if print_expr(prop.expr) == "(a)":
            assert prop.log_accept_ratio == pytest.approx(math.log(1 / 3))
            seen.add("b->a")
        else:
            assert prop.log_accept_ratio == pytest.approx(0.0)
    assert seen == {"a->b", "b->a"}


def test_identical_proposal_always_accepts():
    g = Grammar([Rule("K", "a", (), 1.0)], start="K")
    model = ConstantLikelihood()
    rng = np.random.default_rng(0)
    prop = propose(g, model, None, parse("(a)"), 0.0, rng)
    assert prop.log_accept_ratio == pytest.approx(0.0)
    chain = Chain(current=parse("(a)"), loglik=0.0, logprior=0.0, rng=rng)
    transition(chain, g, model, None)
    assert chain.accepts == 1


def test_filtered_addresses_split_structure_and_params():
    from progsynth.gp import gp_grammar

    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    assert set(filtered_addresses(g, e, "structure")) == {(), (1,), (2,)}
    assert set(filtered_addresses(g, e, "params")) == {(1, 1), (2, 1)}
    assert len(filtered_addresses(g, e, "all")) == 5


def test_schedule_parsing_and_phases():
    sched = MoveSchedule.parse("alternating:3:2")
    phases = [sched.filter_at(i) for i in range(10)]
    assert phases == ["structure"] * 3 + ["params"] * 2 + ["structure"] * 3 + \
        ["params"] * 2
    assert MoveSchedule.parse("uniform").filter_at(17) == "all"
    with pytest.raises(ValueError):
        MoveSchedule.parse("sometimes")


def test_synthesize_deterministic_and_sized():
    g = micro_grammar()
    model = micro_likelihood()
    config = SynthesisConfig(chains=8, steps=50, seed=31)
    e1 = synthesize(g, model, None, config)
    e2 = synthesize(g, model, None, config)
    assert len(e1) == 8
    assert [print_expr(m.expr) for m in e1.members] == \
        [print_expr(m.expr) for m in e2.members]
    assert [m.loglik for m in e1.members] == [m.loglik for m in e2.members]


def test_synthesize_zero_steps_returns_prior_draws():
    g = micro_grammar()
    ens = synthesize(g, micro_likelihood(), None,
                     SynthesisConfig(chains=5, steps=0, seed=1))
    for m in ens.members:
        assert m.loglik > -math.inf
        assert print_expr(m.expr) in MICRO_WORDS
