"""Venture-syntax code generation for synthesized programs.

Output is interop/documentation text; predictions run through the native
evaluators, never through this code.  Emission is byte-deterministic and
fails loudly on unknown tags.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .sexpr import Expr, format_atom, print_expr


class TranslationError(ValueError):
    pass


@dataclass(frozen=True)
class VentureText:
    text: str
    source_hash: str


def _hash(e: Expr) -> str:
    return hashlib.sha256(print_expr(e).encode()).hexdigest()[:12]


def _gamma_value(e: Expr) -> str:
    return format_atom(e.args[0])


def _cov_text(k: Expr) -> str:
    tag = k.tag
    if tag == "const":
        return "((x1, x2) -> {%s})" % _gamma_value(k.children[0])
    if tag == "wn":
        v = _gamma_value(k.children[0])
        return "((x1, x2) -> {if (x1 == x2) {%s} else {0}})" % v
    if tag == "lin":
        v = _gamma_value(k.children[0])
        return "((x1, x2) -> {(x1 - %s) * (x2 - %s)})" % (v, v)
    if tag == "se":
        v = _gamma_value(k.children[0])
        return "((x1, x2) -> {exp(-(x1 - x2)**2/%s)})" % v
    if tag == "per":
        v1 = _gamma_value(k.children[0])
        v2 = _gamma_value(k.children[1])
        return "((x1, x2) -> {-2/%s * sin(2*pi/%s * abs(x1 - x2))**2})" % (v1, v2)
    if tag in ("+", "*"):
        c1 = _cov_text(k.children[0])
        c2 = _cov_text(k.children[1])
        return "((x1, x2) -> {%s(x1, x2) %s %s(x1, x2)})" % (c1, tag, c2)
    if tag == "cp":
        v = _gamma_value(k.children[0])
        c1 = _cov_text(k.children[1])
        c2 = _cov_text(k.children[2])
        return ("((x1, x2) -> {"
                "sig1 = sigmoid(x1, %s, .1) * sigmoid(x2, %s, .1); "
                "sig2 = (1 - sigmoid(x1, %s, .1)) * (1 - sigmoid(x2, %s, .1)); "
                "sig1 * %s(x1, x2) + sig2 * %s(x1, x2)})"
                % (v, v, v, v, c1, c2))
    raise TranslationError(f"unknown kernel tag {tag!r}")


def gp_to_venture(k: Expr) -> VentureText:
    """assume-form covariance program for a kernel expression."""
    text = "assume gp = gaussian_process(gp_mean_constant(0), %s);\n" % _cov_text(k)
    return VentureText(text, _hash(k))


def _fraction(weight: int, n: int) -> str:
    return format_atom(weight / n)


def mixture_to_venture(p: Expr) -> VentureText:
    """Per block: a categorical cluster pick over the normalized weights,
    then one cond per variable dispatching on the cluster."""
    if p.tag != "partition":
        raise TranslationError(f"expected a partition, got {p.tag!r}")
    lines = []
    n = sum(cl.args[0] for cl in p.children[0].children)
    for bi, block in enumerate(p.children, start=1):
        if block.tag != "block":
            raise TranslationError(f"expected a block, got {block.tag!r}")
        weights = [cl.args[0] for cl in block.children]
        simplex = ", ".join(_fraction(w, n) for w in weights)
        lines.append(f"assume block{bi}_cluster =")
        lines.append(f"  categorical(simplex([{simplex}])) #block:{bi};")
        lines.append("")
        cols = block.args[0]
        for pos, col in enumerate(cols):
            lines.append(f"assume var{col} = cond(")
            clauses = []
            for j, cl in enumerate(block.children):
                dist = cl.children[pos].children[0]
                clauses.append(f"  (block{bi}_cluster == {j}) ({_dist_text(dist)})")
            lines.append("\n".join(clauses) + ");")
            lines.append("")
    text = "\n".join(lines).rstrip("\n") + "\n"
    return VentureText(text, _hash(p))


def _dist_text(dist: Expr) -> str:
    args = [format_atom(a) for a in dist.args]
    if dist.tag == "normal":
        return f"normal({args[0]}, {args[1]})"
    if dist.tag == "poisson":
        return f"poisson({args[0]})"
    if dist.tag == "categorical":
        return f"categorical(simplex([{', '.join(args)}]))"
    raise TranslationError(f"unknown distribution tag {dist.tag!r}")
