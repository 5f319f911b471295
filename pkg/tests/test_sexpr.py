import numpy as np
import pytest

from progsynth.gp import gp_grammar
from progsynth.grammar import sample
from progsynth.sexpr import (Expr, FillMismatchError, SexprError, addresses,
                             fill, parse, print_expr, sever, subexpr)


def test_parse_simple_kernel():
    e = parse("(lin (gamma 1.2))")
    assert e.tag == "lin"
    assert len(e.children) == 1
    assert e.children[0].tag == "gamma"
    assert e.children[0].atoms == (1.2,)


def test_parse_binary_sum():
    e = parse("(+ (wn (gamma 0.5)) (se (gamma 2.0)))")
    assert e.tag == "+"
    assert [c.tag for c in e.children] == ["wn", "se"]


def test_parse_unbalanced_reports_offset():
    with pytest.raises(SexprError) as err:
        parse("((lin)")
    assert err.value.offset == 6
    assert "unbalanced" in str(err.value)


def test_parse_empty_list_rejected():
    with pytest.raises(SexprError):
        parse("(per ())")


def test_parse_malformed_number():
    with pytest.raises(SexprError) as err:
        parse("(gamma 1.2.3)")
    assert "1.2.3" in str(err.value)


def test_parse_trailing_content():
    with pytest.raises(SexprError):
        parse("(a) (b)")


def test_parse_bare_integer_list():
    e = parse("(block (2 3) (cluster 10))")
    assert e.args[0] == (2, 3)


def test_parse_bare_list_must_be_integers():
    with pytest.raises(SexprError):
        parse("(block (2 3.5))")


def test_print_integral_float_without_decimal_point():
    assert print_expr(Expr("gamma", (1.0,))) == "(gamma 1)"


def test_print_normalizes_whitespace():
    raw = "( +  (wn (gamma .5))  (se (gamma 2)) )"
    assert print_expr(parse(raw)) == "(+ (wn (gamma 0.5)) (se (gamma 2)))"


def test_addresses_two_level_tree():
    e = parse("(t0 (t1 (t3) (t4)) (t2 (t5) (t6)))")
    assert set(addresses(e)) == {(), (1,), (2,), (1, 1), (1, 2), (2, 1), (2, 2)}


def test_addresses_skip_parameter_atoms():
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    assert set(addresses(e)) == {(), (1,), (2,), (1, 1), (2, 1)}
    assert len(addresses(e)) == 5


def test_addresses_single_leaf():
    assert addresses(parse("(c)")) == [()]


def test_subexpr():
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    assert subexpr(e, (2,)) == parse("(wn (gamma 2))")
    assert subexpr(e, (1, 1)) == parse("(gamma 1)")
    assert subexpr(e, ()) == e


def test_subexpr_out_of_range_is_failure():
    assert subexpr(parse("(c)"), (3,)) is None


def test_sever_at_root_gives_start_nonterminal():
    g = gp_grammar()
    e = parse("(lin (gamma 1))")
    nt, hole = sever(e, (), g.tag_owner)
    assert nt == "K"
    assert hole.hole_address == ()


def test_sever_reports_producing_nonterminal():
    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    nt, hole = sever(e, (2,), g.tag_owner)
    assert nt == "K"
    nt, _ = sever(e, (1, 1), g.tag_owner)
    assert nt == "H"


def test_sever_invalid_address_is_failure():
    g = gp_grammar()
    assert sever(parse("(const (gamma 1))"), (5,), g.tag_owner) is None


def test_fill_round_trip():
    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    for a in addresses(e):
        nt, hole = sever(e, a, g.tag_owner)
        assert fill(hole, subexpr(e, a)) == e


def test_fill_simple():
    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    _, hole = sever(e, (2,), g.tag_owner)
    assert fill(hole, parse("(se (gamma 3))")) == \
        parse("(+ (lin (gamma 1)) (se (gamma 3)))")


def test_fill_rejects_nonterminal_mismatch():
    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    _, hole = sever(e, (1, 1), g.tag_owner)  # an H hole
    with pytest.raises(FillMismatchError):
        fill(hole, parse("(se (gamma 3))"))


def test_fill_rejects_unknown_tag():
    g = gp_grammar()
    _, hole = sever(parse("(const (gamma 1))"), (), g.tag_owner)
    with pytest.raises(FillMismatchError):
        fill(hole, parse("(partition (block (1)))"))


def test_round_trip_of_sampled_programs():
    g = gp_grammar()
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        e = sample(g, "K", rng)
        assert parse(print_expr(e)) == e


def test_sever_fill_round_trip_of_sampled_programs():
    g = gp_grammar()
    rng = np.random.default_rng(99)
    for _ in range(1000):
        e = sample(g, "K", rng)
        addrs = addresses(e)
        a = addrs[rng.integers(len(addrs))]
        nt, hole = sever(e, a, g.tag_owner)
        assert fill(hole, subexpr(e, a)) == e


def test_address_count_equals_tagged_node_count():
    g = gp_grammar()
    rng = np.random.default_rng(5)
    for _ in range(200):
        e = sample(g, "K", rng)
        assert len(addresses(e)) == sum(1 for _ in e.walk())


def test_replacing_subtree_preserves_outside_addresses():
    g = gp_grammar()
    e = parse("(+ (lin (gamma 1)) (wn (gamma 2)))")
    _, hole = sever(e, (2,), g.tag_owner)
    replaced = fill(hole, parse("(+ (se (gamma 1)) (const (gamma 1)))"))
    outside = {a for a in addresses(e) if a[:1] != (2,)}
    assert outside <= set(addresses(replaced))
