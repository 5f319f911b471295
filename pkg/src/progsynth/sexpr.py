"""Tagged s-expressions: parsing, printing, tree addressing and surgery.

Every program in both modeling languages is a tree of tagged nodes.  A node
is ``(tag item ...)`` where each item is either another tagged node or an
atom (number, symbol, or a bare integer list like the column group ``(2 3)``
used by mixture programs).  Atoms are payload, not tree nodes: addressing,
sever and fill only ever touch tagged nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

Atom = Union[int, float, str, tuple]
Address = tuple  # tuple of 1-based child indices; () is the root


class SexprError(Exception):
    """Malformed s-expression text."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class FillMismatchError(Exception):
    """Subtree tag not producible from the hole's nonterminal."""


@dataclass(frozen=True)
class Expr:
    tag: str
    args: tuple = ()

    @property
    def children(self) -> tuple:
        return tuple(a for a in self.args if isinstance(a, Expr))

    @property
    def atoms(self) -> tuple:
        return tuple(a for a in self.args if not isinstance(a, Expr))

    def walk(self) -> Iterator["Expr"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def __str__(self) -> str:
        return print_expr(self)


@dataclass(frozen=True)
class ExprWithHole:
    """An expression with exactly one subtree removed.

    The hole is identified by the address it was severed at; the severed
    nonterminal is kept so fill() can reject incompatible subtrees.
    """

    expr: Expr
    hole_address: Address
    nonterminal: str
    tag_owner: Optional[Mapping[str, str]] = field(default=None, compare=False)

    def __str__(self) -> str:
        return print_expr(_replace_at(self.expr, self.hole_address, _HOLE))


_HOLE = Expr("□")  # printed marker only; never parsed back


def format_atom(a) -> str:
    """Canonical atom text: shortest float round-trip, integral floats bare."""
    if isinstance(a, bool):
        raise TypeError("booleans are not atoms")
    if isinstance(a, int):
        return str(a)
    if isinstance(a, float):
        if a != a or a in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite atom {a!r}")
        if a.is_integer() and abs(a) < 1e16:
            return str(int(a))
        return repr(a)
    if isinstance(a, tuple):
        return "(" + " ".join(str(int(v)) for v in a) + ")"
    return str(a)


def print_expr(e: Expr) -> str:
    parts = [e.tag]
    for a in e.args:
        parts.append(print_expr(a) if isinstance(a, Expr) else format_atom(a))
    return "(" + " ".join(parts) + ")"


_WS = " \t\r\n"
_DELIM = _WS + "()"


def _looks_numeric(tok: str) -> bool:
    if tok[0].isdigit():
        return True
    return len(tok) > 1 and tok[0] in "+-." and (tok[1].isdigit() or
                                                 (tok[0] in "+-" and tok[1] == "." and
                                                  len(tok) > 2 and tok[2].isdigit()))


def _parse_atom(tok: str, offset: int):
    if not _looks_numeric(tok):
        return tok  # symbol (tags, '+', '*', ...)
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        v = float(tok)
    except ValueError:
        raise SexprError(f"malformed numeric literal {tok!r}", offset) from None
    if v != v or v in (float("inf"), float("-inf")):
        raise SexprError(f"non-finite numeric literal {tok!r}", offset)
    return v


def _tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in _WS:
            i += 1
        elif c in "()":
            yield c, i
            i += 1
        else:
            j = i
            while j < n and text[j] not in _DELIM:
                j += 1
            yield text[i:j], i
            i = j
    yield None, n


def parse(text: str) -> Expr:
    """Parse one tagged s-expression; whitespace-insensitive.

    Raises SexprError (with byte offset) on unbalanced parentheses, empty
    lists, malformed numbers, or trailing content.
    """
    tokens = _tokenize(text)

    def parse_form(open_offset: int):
        items = []
        while True:
            tok, off = next(tokens)
            if tok is None:
                raise SexprError("unbalanced parenthesis", off)
            if tok == ")":
                if not items:
                    raise SexprError("empty list", open_offset)
                return items, off
            if tok == "(":
                items.append(parse_form(off))
            else:
                items.append((_parse_atom(tok, off), off))

    # parse_form yields flat lists of (atom, offset) pairs with nested lists
    # wrapped the same way; build normalizes them into Expr / bare tuples
    def build(items, open_offset: int):
        head, head_off = items[0]
        if isinstance(head, list):
            raise SexprError("expected tag or integer, found list", open_offset)
        if isinstance(head, (int, float)):
            values = []
            for item, off in items:
                if not isinstance(item, int):
                    raise SexprError("bare lists may contain integers only", off)
                values.append(item)
            return tuple(values)
        args = []
        for item, off in items[1:]:
            if isinstance(item, list):
                args.append(build(item, off))
            else:
                args.append(item)
        return Expr(head, tuple(args))

    tok, off = next(tokens)
    if tok is None:
        raise SexprError("empty input", off)
    if tok != "(":
        raise SexprError(f"expected '(', found {tok!r}", off)
    items, _ = parse_form(off)
    result = build(items, off)
    if isinstance(result, tuple):
        raise SexprError("top-level form must be tagged", off)
    tok, off = next(tokens)
    if tok is not None:
        raise SexprError(f"trailing content {tok!r}", off)
    return result


def addresses(e: Expr) -> list:
    """All tagged-node addresses of e in preorder; the root is ()."""
    out = [()]
    for i, child in enumerate(e.children, start=1):
        out.extend((i,) + a for a in addresses(child))
    return out


def subexpr(e: Expr, a: Address) -> Optional[Expr]:
    """Subtree rooted at a, or None if a is not a node of e.

    The root address () returns e itself.
    """
    node = e
    for idx in a:
        kids = node.children
        if not 1 <= idx <= len(kids):
            return None
        node = kids[idx - 1]
    return node


def _replace_at(e: Expr, a: Address, sub: Expr) -> Expr:
    if not a:
        return sub
    idx = a[0]
    new_args = []
    seen = 0
    for item in e.args:
        if isinstance(item, Expr):
            seen += 1
            if seen == idx:
                item = _replace_at(item, a[1:], sub)
        new_args.append(item)
    return Expr(e.tag, tuple(new_args))


def sever(e: Expr, a: Address, tag_owner: Mapping[str, str]):
    """Remove the subtree at a.

    Returns (nonterminal, ExprWithHole) where the nonterminal is the one that
    produced the severed subtree's root tag, or None if a is not a node of e.
    """
    target = subexpr(e, a)
    if target is None:
        return None
    nt = tag_owner.get(target.tag)
    if nt is None:
        raise KeyError(f"tag {target.tag!r} not bound to a nonterminal")
    return nt, ExprWithHole(e, a, nt, tag_owner)


def fill(hole: ExprWithHole, sub: Expr) -> Expr:
    """Replace the hole with sub; rejects a tag/nonterminal mismatch."""
    if hole.tag_owner is not None:
        owner = hole.tag_owner.get(sub.tag)
        if owner != hole.nonterminal:
            raise FillMismatchError(
                f"tag {sub.tag!r} (from {owner!r}) cannot fill a "
                f"{hole.nonterminal!r} hole")
    return _replace_at(hole.expr, hole.hole_address, sub)
