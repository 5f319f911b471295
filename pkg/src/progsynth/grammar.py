"""Tagged probabilistic context-free grammars with random terminal symbols.

A grammar is a set of production rules, each carrying a globally unique
phrase tag, so any expression parses unambiguously by tag dispatch.  Rules
either expand into child nonterminals, or terminate with an optional random
atom drawn from the rule's terminal distribution.  The module provides prior
sampling, prior log-density, and the consistency analysis (normal-form
expectation matrix + spectral radius test).
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .sexpr import Expr

NEG_INF = float("-inf")


class GrammarError(Exception):
    pass


class SamplingDepthError(GrammarError):
    """Recursion guard hit while sampling; the grammar is likely inconsistent."""


class GrammarFileError(GrammarError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# terminal distributions

class DiscreteTerminal:
    """Finite symbol distribution; probabilities must sum to 1."""

    kind = "choice"

    def __init__(self, items):
        self.items = tuple((str(s), float(p)) for s, p in items)
        self._cum = np.cumsum([p for _, p in self.items])
        self._logp = {s: math.log(p) if p > 0 else NEG_INF for s, p in self.items}

    def sample(self, rng):
        u = rng.random()
        idx = int(np.searchsorted(self._cum, u, side="right"))
        return self.items[min(idx, len(self.items) - 1)][0]

    def logpdf(self, value) -> float:
        if not isinstance(value, str):
            return NEG_INF
        return self._logp.get(value, NEG_INF)

    def total(self) -> float:
        return float(sum(p for _, p in self.items))

    def spec(self) -> str:
        return "choice(" + ",".join(f"{s}={format_prob(p)}" for s, p in self.items) + ")"

    def __eq__(self, other):
        return isinstance(other, DiscreteTerminal) and self.items == other.items


class GammaTerminal:
    """Gamma(alpha, beta) density over a positive numeric atom.

    Samples below `floor` are redrawn: tiny values blow up kernels that put
    the atom in a denominator, and the prior mass lost is negligible.
    """

    kind = "gamma"

    def __init__(self, alpha: float = 1.0, beta: float = 1.0, floor: float = 1e-9):
        if alpha <= 0 or beta <= 0:
            raise GrammarError("gamma terminal needs alpha > 0 and beta > 0")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.floor = floor
        self._lognorm = alpha * math.log(beta) - math.lgamma(alpha)

    def sample(self, rng) -> float:
        while True:
            v = float(rng.gamma(self.alpha, 1.0 / self.beta))
            if v >= self.floor:
                return v

    def logpdf(self, value) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return NEG_INF
        v = float(value)
        if v <= 0 or not math.isfinite(v):
            return NEG_INF
        return self._lognorm + (self.alpha - 1.0) * math.log(v) - self.beta * v

    def spec(self) -> str:
        return f"gamma({format_prob(self.alpha)},{format_prob(self.beta)})"

    def __eq__(self, other):
        return (isinstance(other, GammaTerminal)
                and (self.alpha, self.beta) == (other.alpha, other.beta))


def format_prob(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else repr(float(p))


# ---------------------------------------------------------------------------
# grammar

@dataclass(frozen=True)
class Rule:
    lhs: str
    tag: str
    rhs: tuple = ()
    prob: float = 1.0
    terminal: object = None  # DiscreteTerminal | GammaTerminal | None


class Grammar:
    """Immutable after construction; share freely across threads."""

    def __init__(self, rules: Sequence[Rule], start: str,
                 nonterminals: Optional[Sequence[str]] = None):
        self.rules = tuple(rules)
        self.start = start
        if nonterminals is None:
            seen = []
            for r in self.rules:
                for nt in (r.lhs, *r.rhs):
                    if nt not in seen:
                        seen.append(nt)
            nonterminals = seen
        self.nonterminals = tuple(nonterminals)
        self.rules_by_lhs = {nt: tuple(r for r in self.rules if r.lhs == nt)
                             for nt in self.nonterminals}
        self.rule_by_tag = {}
        for r in self.rules:
            self.rule_by_tag.setdefault(r.tag, r)
        # tag -> producing nonterminal, the binding sever() needs
        self.tag_owner = {r.tag: r.lhs for r in self.rules}

    def __eq__(self, other):
        return (isinstance(other, Grammar)
                and self.rules == other.rules
                and self.start == other.start
                and self.nonterminals == other.nonterminals)

    @property
    def parameter_tags(self) -> frozenset:
        """Tags of terminal rules; resampling these nodes moves parameters
        without touching program structure."""
        return frozenset(r.tag for r in self.rules if not r.rhs)

    @property
    def structure_tags(self) -> frozenset:
        return frozenset(r.tag for r in self.rules if r.rhs)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(self.violations)


def validate(g: Grammar) -> ValidationReport:
    report = ValidationReport()
    if g.start not in g.nonterminals:
        report.violations.append(f"start symbol {g.start} is not a nonterminal")
    seen_tags = set()
    for r in g.rules:
        if r.tag in seen_tags:
            report.violations.append(f"duplicate tag {r.tag}")
        seen_tags.add(r.tag)
        if not (0.0 < r.prob <= 1.0):
            report.violations.append(f"P({r.tag}) = {r.prob} outside (0, 1]")
        for nt in r.rhs:
            if nt not in g.nonterminals:
                report.violations.append(f"rule {r.tag}: unknown nonterminal {nt}")
        if isinstance(r.terminal, DiscreteTerminal):
            if any(p < 0 for _, p in r.terminal.items):
                report.violations.append(f"Q for {r.tag} has a negative probability")
            total = r.terminal.total()
            if abs(total - 1.0) > 1e-12:
                report.violations.append(f"Q for {r.tag} sums to {total}")
    for nt in g.nonterminals:
        rules = g.rules_by_lhs.get(nt, ())
        if not rules:
            report.violations.append(f"useless symbol {nt} (no rules)")
            continue
        total = sum(r.prob for r in rules)
        if abs(total - 1.0) > 1e-12:
            report.violations.append(f"P for {nt} sums to {total}")
    # reachability from the start symbol
    reachable = {g.start}
    frontier = [g.start]
    while frontier:
        nt = frontier.pop()
        for r in g.rules_by_lhs.get(nt, ()):
            for child in r.rhs:
                if child not in reachable:
                    reachable.add(child)
                    frontier.append(child)
    for nt in g.nonterminals:
        if nt not in reachable:
            report.violations.append(f"useless symbol {nt} (unreachable)")
    # termination: least fixed point over "has a finite derivation"
    terminating = set()
    changed = True
    while changed:
        changed = False
        for nt in g.nonterminals:
            if nt in terminating:
                continue
            for r in g.rules_by_lhs.get(nt, ()):
                if all(child in terminating for child in r.rhs):
                    terminating.add(nt)
                    changed = True
                    break
    for nt in g.nonterminals:
        if nt in reachable and nt not in terminating:
            report.violations.append(f"useless symbol {nt} (no terminating derivation)")
    return report


# ---------------------------------------------------------------------------
# sampling and density

def sample_scored(g: Grammar, nonterminal: str, rng, max_depth: int = 10_000):
    """Draw an expression from `nonterminal`; returns (expr, log density)."""

    def draw(nt: str, depth: int):
        if depth > max_depth:
            raise SamplingDepthError(
                f"recursion depth {max_depth} exceeded sampling {nt}; "
                "is the grammar consistent?")
        rules = g.rules_by_lhs[nt]
        if len(rules) == 1:
            rule, logp = rules[0], 0.0
        else:
            u = rng.random()
            acc = 0.0
            rule = rules[-1]
            for r in rules:
                acc += r.prob
                if u < acc:
                    rule = r
                    break
            logp = math.log(rule.prob)
        if rule.rhs:
            args = []
            for child_nt in rule.rhs:
                child, child_logp = draw(child_nt, depth + 1)
                args.append(child)
                logp += child_logp
            return Expr(rule.tag, tuple(args)), logp
        if rule.terminal is None:
            return Expr(rule.tag), logp
        atom = rule.terminal.sample(rng)
        return Expr(rule.tag, (atom,)), logp + rule.terminal.logpdf(atom)

    return draw(nonterminal, 0)


def sample(g: Grammar, nonterminal: str, rng, max_depth: int = 10_000) -> Expr:
    return sample_scored(g, nonterminal, rng, max_depth)[0]


def expand_logdensity(g: Grammar, nonterminal: str, e: Expr) -> float:
    """Log density of `e` being produced from `nonterminal`; -inf if impossible."""
    rule = g.rule_by_tag.get(e.tag)
    if rule is None or rule.lhs != nonterminal:
        return NEG_INF
    logp = math.log(rule.prob)
    children = e.children
    if rule.rhs:
        if e.atoms or len(children) != len(rule.rhs):
            return NEG_INF
        for child_nt, child in zip(rule.rhs, children):
            child_logp = expand_logdensity(g, child_nt, child)
            if child_logp == NEG_INF:
                return NEG_INF
            logp += child_logp
        return logp
    if children:
        return NEG_INF
    atoms = e.atoms
    if rule.terminal is None:
        return logp if not atoms else NEG_INF
    if len(atoms) != 1:
        return NEG_INF
    term_logp = rule.terminal.logpdf(atoms[0])
    return NEG_INF if term_logp == NEG_INF else logp + term_logp


def prior_logdensity(g: Grammar, e: Expr) -> float:
    return expand_logdensity(g, g.start, e)


# ---------------------------------------------------------------------------
# consistency analysis

@dataclass
class ExpectationMatrix:
    matrix: np.ndarray
    labels: list

    def entry(self, row: str, col: str) -> float:
        return float(self.matrix[self.labels.index(row), self.labels.index(col)])


def expectation_matrix(g: Grammar) -> ExpectationMatrix:
    """Expected-successor matrix of the normal-form grammar.

    The normal form gives every phrase tag its own terminal node and factors
    each rule's argument list through shared sequence nodes; a nonterminal
    whose single rule is terminal-only collapses into its tag node.  Adjacent
    repeats of a tag node in an argument list merge (they generate nothing
    further, so expected growth is unchanged).
    """
    report = validate(g)
    if not report.ok:
        raise GrammarError(f"grammar invalid: {report}")

    collapsed = {}
    for nt in g.nonterminals:
        rules = g.rules_by_lhs[nt]
        if len(rules) == 1 and not rules[0].rhs:
            collapsed[nt] = rules[0].tag

    labels: list = []
    productions: dict = {}

    def ensure(label: str) -> str:
        if label not in productions:
            labels.append(label)
            productions[label] = []
        return label

    def repr_of(nt: str) -> str:
        return ensure(collapsed[nt]) if nt in collapsed else nt

    def is_tag_node(label: str) -> bool:
        return label in g.tag_owner or label in g.rule_by_tag

    def seq_node(symbols) -> str:
        if len(symbols) == 1:
            return symbols[0]
        label = "(" + " ".join(symbols) + ")"
        if label not in productions:
            head, rest = symbols[0], seq_node(symbols[1:])
            ensure(label)
            productions[label].append((1.0, (head, rest)))
        return label

    originals = [nt for nt in g.nonterminals if nt not in collapsed]
    for nt in originals:
        ensure(nt)
    for nt in originals:
        for rule in g.rules_by_lhs[nt]:
            tag_label = ensure(rule.tag)
            syms = []
            for child in rule.rhs:
                r = repr_of(child)
                if syms and syms[-1] == r and is_tag_node(r):
                    continue
                syms.append(r)
            if not syms:
                prod = (tag_label,)
            else:
                prod = (tag_label, seq_node(syms))
            productions[nt].append((rule.prob, prod))

    size = len(labels)
    matrix = np.zeros((size, size))
    index = {label: i for i, label in enumerate(labels)}
    for label, prods in productions.items():
        i = index[label]
        for prob, symbols in prods:
            for s in symbols:
                matrix[i, index[s]] += prob
    return ExpectationMatrix(matrix, labels)


@dataclass
class ConsistencyReport:
    spectral_radius: float
    consistent: bool
    eigenvalue_moduli: np.ndarray


def check_consistency(g: Grammar) -> ConsistencyReport:
    """Spectral-radius test: the expected number of derivation steps is
    finite, and the prior sums to 1, exactly when the radius is below 1."""
    m = expectation_matrix(g).matrix
    if m.shape[0] <= 64:
        moduli = np.sort(np.abs(np.linalg.eigvals(m)))[::-1]
        radius = float(moduli[0]) if moduli.size else 0.0
    else:  # pragma: no cover - grammars here are tiny
        radius = _power_radius(m)
        moduli = np.array([radius])
    return ConsistencyReport(radius, bool(radius < 1.0), moduli)


def _power_radius(m: np.ndarray, iters: int = 20_000, tol: float = 1e-10) -> float:
    v = np.ones(m.shape[0])
    radius = 0.0
    for _ in range(iters):
        w = m @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        w /= norm
        new_radius = float(w @ (m @ w))
        if abs(new_radius - radius) <= tol * max(1.0, abs(new_radius)):
            return new_radius
        radius, v = new_radius, w
    return radius


def termination_probabilities(g: Grammar, nonterminal: str, max_depth: int) -> np.ndarray:
    """P(derivation from `nonterminal` closes within depth d), d = 0..max_depth.

    Depth counts only nodes of nonterminals that can still recurse; parameter
    symbols (which cannot reach a recursive nonterminal) are free.
    """
    reach = {nt: set() for nt in g.nonterminals}
    for nt in g.nonterminals:
        frontier = [nt]
        while frontier:
            cur = frontier.pop()
            for r in g.rules_by_lhs.get(cur, ()):
                for child in r.rhs:
                    if child not in reach[nt]:
                        reach[nt].add(child)
                        frontier.append(child)
    recursive = {nt for nt in g.nonterminals if nt in reach[nt]}
    inert = {nt for nt in g.nonterminals
             if nt not in recursive and not (reach[nt] & recursive)}

    probs = {nt: np.zeros(max_depth + 1) for nt in g.nonterminals}
    for nt in inert:
        probs[nt][:] = 1.0
    for d in range(1, max_depth + 1):
        for nt in g.nonterminals:
            if nt in inert:
                continue
            total = 0.0
            for r in g.rules_by_lhs[nt]:
                term = r.prob
                for child in r.rhs:
                    term *= probs[child][d - 1]
                total += term
            probs[nt][d] = total
    return probs[nonterminal]


# ---------------------------------------------------------------------------
# grammar definition files

_TERMINAL_RE = re.compile(r"^(gamma|choice)\((.*)\)$")


def _parse_terminal(spec: str, line: int):
    m = _TERMINAL_RE.match(spec)
    if not m:
        raise GrammarFileError(f"bad terminal spec {spec!r}", line)
    kind, body = m.groups()
    if kind == "gamma":
        parts = body.split(",")
        if len(parts) != 2:
            raise GrammarFileError("gamma terminal needs two parameters", line)
        try:
            return GammaTerminal(float(parts[0]), float(parts[1]))
        except ValueError:
            raise GrammarFileError(f"bad gamma parameters {body!r}", line) from None
    items = []
    for part in body.split(","):
        if "=" not in part:
            raise GrammarFileError(f"bad choice entry {part!r}", line)
        sym, _, p = part.partition("=")
        try:
            items.append((sym.strip(), float(p)))
        except ValueError:
            raise GrammarFileError(f"bad probability {p!r}", line) from None
    return DiscreteTerminal(items)


def load_grammar(text: str) -> Grammar:
    """Parse the declarative grammar format.

    Lines: ``start NT`` once, and ``rule LHS PROB (tag RHS...) [terminal]``
    where the optional terminal is ``gamma(a,b)`` or ``choice(s=p,...)``.
    """
    start = None
    rules = []
    order: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "start":
            if len(tokens) != 2:
                raise GrammarFileError("start line needs one symbol", lineno)
            start = tokens[1]
            continue
        if tokens[0] != "rule":
            raise GrammarFileError(f"unknown directive {tokens[0]!r}", lineno)
        body = line[len("rule"):].strip()
        m = re.match(r"^(\S+)\s+(\S+)\s+\(([^()]*)\)\s*(\S+)?$", body)
        if not m:
            raise GrammarFileError("expected: rule LHS PROB (tag RHS...) [terminal]",
                                   lineno)
        lhs, prob_text, inner, term_spec = m.groups()
        try:
            prob = float(prob_text)
        except ValueError:
            raise GrammarFileError(f"bad probability {prob_text!r}", lineno) from None
        inner_tokens = inner.split()
        if not inner_tokens:
            raise GrammarFileError("empty production", lineno)
        tag, rhs = inner_tokens[0], tuple(inner_tokens[1:])
        terminal = _parse_terminal(term_spec, lineno) if term_spec else None
        if terminal is not None and rhs:
            raise GrammarFileError("terminal distributions only on leaf rules", lineno)
        rules.append(Rule(lhs, tag, rhs, prob, terminal))
        for nt in (lhs, *rhs):
            if nt not in order:
                order.append(nt)
    if start is None:
        raise GrammarFileError("missing start line", 0)
    return Grammar(rules, start, order)


def dump_grammar(g: Grammar) -> str:
    lines = [f"start {g.start}"]
    for r in g.rules:
        body = " ".join((r.tag, *r.rhs))
        line = f"rule {r.lhs} {format_prob(r.prob)} ({body})"
        if r.terminal is not None:
            line += " " + r.terminal.spec()
        lines.append(line)
    return "\n".join(lines) + "\n"


def grammar_hash(g: Grammar) -> str:
    return hashlib.sha256(dump_grammar(g).encode()).hexdigest()[:12]
