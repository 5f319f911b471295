"""Structure queries over synthesized programs.

Kernel programs: count base kernels / operators and evaluate boolean
predicates over those counts ("per > 0 or cp > 0").  Mixture programs:
co-block membership of column pairs, with the 0.8 detection rule.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .gp import BASE_KERNEL_TAGS, OPERATOR_TAGS
from .sexpr import Expr

SAME_BLOCK_THRESHOLD = 0.8


def count_kernels(e: Expr, base_tag: str) -> int:
    """Leaf base-kernel nodes with the given tag."""
    if base_tag not in BASE_KERNEL_TAGS:
        raise ValueError(f"unknown base kernel tag {base_tag!r}")
    return sum(1 for node in e.walk() if node.tag == base_tag)


def count_operators(e: Expr, op_tag: str) -> int:
    """Internal operator nodes with the given tag."""
    if op_tag not in OPERATOR_TAGS:
        raise ValueError(f"unknown operator tag {op_tag!r}")
    return sum(1 for node in e.walk() if node.tag == op_tag)


@dataclass(frozen=True)
class PropertyPredicate:
    name: str
    fn: Callable[[Expr], bool]

    def __call__(self, e: Expr) -> bool:
        return bool(self.fn(e))


def estimate_property(programs, predicate) -> float:
    """Fraction of programs satisfying the predicate."""
    programs = list(programs)
    if not programs:
        raise ValueError("empty ensemble")
    return sum(1 for p in programs if predicate(p)) / len(programs)


# ---------------------------------------------------------------------------
# the little property-expression language used by the CLI:
#   expr  := term ('or' term)*
#   term  := factor ('and' factor)*
#   factor:= 'not' factor | '(' expr ')' | TAG CMP NUMBER
# TAG is a base kernel or operator tag; counts compare against the number.

class PropertyParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(r"\s*(\(|\)|>=|<=|==|!=|>|<|[A-Za-z_][A-Za-z0-9_]*|[+*]|cp|\d+)")

_CMP = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise PropertyParseError(f"bad token {text[pos:].strip()[:8]!r}", pos)
            break
        out.append((m.group(1), m.start(1)))
        pos = m.end()
    return out


def parse_property(text: str, name: str = None) -> PropertyPredicate:
    tokens = _tokenize(text)
    idx = 0

    def peek():
        return tokens[idx][0] if idx < len(tokens) else None

    def take():
        nonlocal idx
        tok = tokens[idx]
        idx += 1
        return tok

    def parse_or():
        node = parse_and()
        while peek() == "or":
            take()
            rhs = parse_and()
            lhs = node
            node = (lambda a, b: lambda e: a(e) or b(e))(lhs, rhs)
        return node

    def parse_and():
        node = parse_factor()
        while peek() == "and":
            take()
            rhs = parse_factor()
            lhs = node
            node = (lambda a, b: lambda e: a(e) and b(e))(lhs, rhs)
        return node

    def parse_factor():
        tok = peek()
        if tok is None:
            raise PropertyParseError("unexpected end of property", len(text))
        if tok == "not":
            take()
            inner = parse_factor()
            return lambda e: not inner(e)
        if tok == "(":
            _, pos = take()
            node = parse_or()
            if peek() != ")":
                raise PropertyParseError("missing ')'", pos)
            take()
            return node
        if tok == "true":
            take()
            return lambda e: True
        if tok == "false":
            take()
            return lambda e: False
        return parse_comparison()

    def parse_comparison():
        tag, pos = take()
        if tag in BASE_KERNEL_TAGS:
            counter = lambda e, t=tag: count_kernels(e, t)
        elif tag in OPERATOR_TAGS:
            counter = lambda e, t=tag: count_operators(e, t)
        else:
            raise PropertyParseError(f"unknown tag {tag!r}", pos)
        op_tok = peek()
        if op_tok not in _CMP:
            raise PropertyParseError("expected comparison operator",
                                     tokens[idx][1] if idx < len(tokens) else len(text))
        take()
        num_tok, num_pos = (take() if idx < len(tokens)
                            else (None, len(text)))
        if num_tok is None or not num_tok.isdigit():
            raise PropertyParseError("expected integer", num_pos)
        cmp_fn, bound = _CMP[op_tok], int(num_tok)
        return lambda e: cmp_fn(counter(e), bound)

    fn = parse_or()
    if idx != len(tokens):
        raise PropertyParseError(f"trailing input {tokens[idx][0]!r}", tokens[idx][1])
    return PropertyPredicate(name or text.strip(), fn)


# ---------------------------------------------------------------------------
# mixture co-block queries

def _block_of(program: Expr, column: int):
    for block in program.children:
        cols = block.args[0]
        if column in cols:
            return cols
    raise KeyError(f"column {column} not in program partition")


def same_block(program: Expr, col_a: int, col_b: int) -> bool:
    return col_b in _block_of(program, col_a)


def mixture_same_block(programs, col_a: int, col_b: int) -> float:
    """Fraction of programs whose partition co-blocks the two columns.

    Values >= 0.8 are reported as a detected dependence.
    """
    programs = list(programs)
    if not programs:
        raise ValueError("empty ensemble")
    return sum(1 for p in programs if same_block(p, col_a, col_b)) / len(programs)
