from pathlib import Path

import pytest

from progsynth.sexpr import Expr, parse
from progsynth.translate import (TranslationError, gp_to_venture,
                                 mixture_to_venture)

GOLDEN = Path(__file__).parent / "golden"

SUM_PRODUCT_KERNEL = ("(+ (* (+ (wn (gamma 49.5)) (const (gamma 250.9))) "
                      "(+ (per (gamma 13.2) (gamma 8.6)) "
                      "(+ (lin (gamma 1.2)) (lin (gamma 4.9))))) "
                      "(wn (gamma 0.1)))")

TWO_BLOCK_PROGRAM = """(partition
 (block (1)
  (cluster 6 (var 1 (normal 0.6 2.1)))
  (cluster 4 (var 1 (normal 0.3 1.7))))
 (block (2 3)
  (cluster 2 (var 2 (normal 7.6 1.9)) (var 3 (poisson 12)))
  (cluster 3 (var 2 (normal 1.1 0.5)) (var 3 (poisson 1)))
  (cluster 5 (var 2 (normal -0.6 2.9)) (var 3 (poisson 4)))))"""


def test_gp_golden_byte_exact():
    out = gp_to_venture(parse(SUM_PRODUCT_KERNEL))
    assert out.text == (GOLDEN / "gp_sum_product_kernel.vnts").read_text()


def test_mixture_golden_byte_exact():
    out = mixture_to_venture(parse(TWO_BLOCK_PROGRAM))
    assert out.text == (GOLDEN / "mixture_two_block_program.vnts").read_text()


def test_mixture_contains_normalized_simplex():
    out = mixture_to_venture(parse(TWO_BLOCK_PROGRAM))
    assert "simplex([0.6, 0.4])" in out.text
    assert "simplex([0.2, 0.3, 0.5])" in out.text


def test_const_kernel_form():
    out = gp_to_venture(parse("(const (gamma 2.5))"))
    assert "((x1, x2) -> {2.5})" in out.text
    assert out.text.startswith("assume gp = gaussian_process(gp_mean_constant(0), ")


def test_sum_composes_children():
    out = gp_to_venture(parse("(+ (const (gamma 1)) (wn (gamma 2)))"))
    assert "((x1, x2) -> {1})(x1, x2) + " in out.text
    assert "if (x1 == x2) {2} else {0}" in out.text


def test_se_emits_negated_exponent():
    out = gp_to_venture(parse("(se (gamma 3))"))
    assert "exp(-(x1 - x2)**2/3)" in out.text


def test_cp_emits_sigmoid_blend():
    out = gp_to_venture(parse("(cp (gamma 5) (const (gamma 1)) (const (gamma 2)))"))
    assert "sigmoid(x1, 5, .1)" in out.text
    assert "sig1 * " in out.text and "sig2 * " in out.text


def test_single_cluster_block_emits_degenerate_simplex():
    p = parse("(partition (block (1) (cluster 4 (var 1 (normal 0 1)))))")
    out = mixture_to_venture(p)
    assert "simplex([1])" in out.text


def test_deterministic_bytes():
    k = parse(SUM_PRODUCT_KERNEL)
    assert gp_to_venture(k).text == gp_to_venture(k).text
    p = parse(TWO_BLOCK_PROGRAM)
    assert mixture_to_venture(p).text == mixture_to_venture(p).text


def test_source_hash_tracks_program():
    a = gp_to_venture(parse("(const (gamma 1))"))
    b = gp_to_venture(parse("(const (gamma 2))"))
    assert a.source_hash != b.source_hash


def test_unknown_tags_fail_loudly():
    with pytest.raises(TranslationError):
        gp_to_venture(Expr("warp", (Expr("gamma", (1.0,)),)))
    with pytest.raises(TranslationError):
        mixture_to_venture(parse("(block (1) (cluster 1 (var 1 (normal 0 1))))"))
    bad_dist = parse("(partition (block (1) (cluster 1 (var 1 (cauchy 0 1)))))")
    with pytest.raises(TranslationError):
        mixture_to_venture(bad_dist)
