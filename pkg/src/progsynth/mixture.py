"""Tabular mixture language: column partitions, per-block row mixtures.

A program partitions the table's columns into blocks; each block is a finite
mixture over rows with integer cluster weights summing to the row count, and
each cluster carries one primitive distribution per column in the block
(normal for numeric, poisson for counts, categorical for nominals).

Synthesis runs a cycle of MH-corrected program mutations: move a column to
an existing or fresh block, split off or merge a unit-weight cluster, shift
weight between clusters, or redraw one distribution's parameters.  Proposal
densities (including those of parameters a move destroys) are computed
exactly, so the chain targets prior x likelihood without bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .sexpr import Expr
from .synthesis import Chain, Ensemble, EnsembleMember, SynthesisConfig, run_chains

NEG_INF = float("-inf")

KIND_CODES = {"numeric": _backend.KIND_NUMERIC,
              "count": _backend.KIND_COUNT,
              "nominal": _backend.KIND_NOMINAL}
DIST_TAGS = {"numeric": "normal", "count": "poisson", "nominal": "categorical"}


class MixtureError(ValueError):
    pass


class TableError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema and table

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str          # numeric | count | nominal
    arity: int = 0     # category count, nominal only

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise TableError(f"unknown column type {self.kind!r}")
        if self.kind == "nominal" and self.arity < 2:
            raise TableError(f"nominal column {self.name!r} needs arity >= 2")


@dataclass(frozen=True)
class TableSchema:
    columns: tuple

    @property
    def m(self) -> int:
        return len(self.columns)

    def index_of(self, name: str) -> int:
        """1-based column index."""
        for i, col in enumerate(self.columns, start=1):
            if col.name == name:
                return i
        raise TableError(f"unknown column {name!r}")

    def spec(self) -> str:
        return ";".join(f"{c.name}:{c.kind}:{c.arity}" for c in self.columns)

    @classmethod
    def from_spec(cls, text: str) -> "TableSchema":
        cols = []
        for part in text.split(";"):
            name, kind, arity = part.rsplit(":", 2)
            cols.append(ColumnSpec(name, kind, int(arity)))
        return cls(tuple(cols))


@dataclass(frozen=True)
class Table:
    schema: TableSchema
    columns: tuple  # one float ndarray per column, NaN marks missing

    @property
    def n(self) -> int:
        return len(self.columns[0])

    def column(self, index: int) -> np.ndarray:
        """1-based access, matching program column indices."""
        return self.columns[index - 1]


def make_table(schema: TableSchema, rows: Sequence[Sequence],
               row_offset: int = 0) -> Table:
    """Rows of per-column optional values (None = missing).

    row_offset shifts row numbers in error messages (CSV header lines).
    """
    if not rows:
        raise TableError("empty tables are rejected")
    cols = []
    for j, spec in enumerate(schema.columns):
        data = np.full(len(rows), np.nan)
        for i, row in enumerate(rows):
            v = row[j]
            if v is None:
                continue
            data[i] = _check_cell(spec, v, i + 1 + row_offset)
        cols.append(data)
    return Table(schema, tuple(cols))


def _check_cell(spec: ColumnSpec, v, rownum: int) -> float:
    where = f"row {rownum}, column {spec.name!r}"
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise TableError(f"{where}: not a number: {v!r}") from None
    if not math.isfinite(x):
        raise TableError(f"{where}: non-finite value")
    if spec.kind == "count":
        if x < 0 or x != int(x):
            raise TableError(f"{where}: counts must be nonnegative integers")
    elif spec.kind == "nominal":
        if x != int(x) or not 1 <= x <= spec.arity:
            raise TableError(f"{where}: nominal values must lie in 1..{spec.arity}")
    return x


def load_table(text: str) -> Table:
    """CSV with a two-line header: names, then types; '?' marks missing.

    Nominal arity is taken from the data (the largest category seen).
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3:
        raise TableError("need a name line, a type line, and at least one row")
    names = [s.strip() for s in lines[0].split(",")]
    kinds = [s.strip() for s in lines[1].split(",")]
    if len(names) != len(kinds):
        raise TableError("header lines disagree on the column count")
    raw_rows = []
    for rownum, line in enumerate(lines[2:], start=3):
        cells = [s.strip() for s in line.split(",")]
        if len(cells) != len(names):
            raise TableError(f"row {rownum}: expected {len(names)} cells, got {len(cells)}")
        raw_rows.append([None if c == "?" else c for c in cells])
    specs = []
    for j, (name, kind) in enumerate(zip(names, kinds)):
        if kind not in KIND_CODES:
            raise TableError(f"column {name!r}: unknown type {kind!r}")
        arity = 0
        if kind == "nominal":
            seen = []
            for r in raw_rows:
                if r[j] is None:
                    continue
                try:
                    seen.append(float(r[j]))
                except ValueError:
                    pass  # make_table reports the bad cell with its position
            if not seen:
                raise TableError(f"column {name!r}: nominal column with no data")
            arity = max(2, int(max(seen)))
        specs.append(ColumnSpec(name, kind, arity))
    return make_table(TableSchema(tuple(specs)), raw_rows, row_offset=2)


def dump_table(table: Table) -> str:
    lines = [",".join(c.name for c in table.schema.columns),
             ",".join(c.kind for c in table.schema.columns)]
    for i in range(table.n):
        cells = []
        for spec, col in zip(table.schema.columns, table.columns):
            v = col[i]
            if np.isnan(v):
                cells.append("?")
            elif spec.kind in ("count", "nominal"):
                cells.append(str(int(v)))
            else:
                cells.append(repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# primitive distributions: prior sampling and the densities it needs

@dataclass(frozen=True)
class MixtureConstants:
    """Hyperparameters of the parameter priors; weakly informative defaults."""

    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    eta: float = 0.0
    xi: float = 1.0
    nu: float = 1.0
    kappa: float = 1.0


DEFAULT_CONSTANTS = MixtureConstants()

_LOG_2PI = math.log(2.0 * math.pi)


def sample_dist(kind: str, arity: int, rng, c: MixtureConstants) -> tuple:
    if kind == "numeric":
        tau = 1.0 / rng.gamma(c.alpha, 1.0 / c.beta)
        v = rng.normal(c.eta, math.sqrt(tau / c.lam))
        return (float(v), float(math.sqrt(tau)))
    if kind == "count":
        return (float(rng.gamma(c.nu, 1.0 / c.xi)),)
    w = rng.dirichlet([c.alpha + 1.0] * arity)
    return tuple(float(x) for x in w / w.sum())


def proposal_logpdf(kind: str, params: tuple, c: MixtureConstants) -> float:
    """Exact log density of sample_dist at `params` (normal in (mean, var)
    coordinates; categorical as a normalized Dirichlet)."""
    if kind == "numeric":
        return _nig_logpdf(params, c)
    if kind == "count":
        y = params[0]
        if y <= 0:
            return NEG_INF
        return c.nu * math.log(c.xi) + (c.nu - 1) * math.log(y) - c.xi * y \
            - math.lgamma(c.nu)
    w = np.asarray(params)
    if (w <= 0).any():
        return NEG_INF
    q = len(w)
    a = c.alpha + 1.0
    return float(math.lgamma(q * a) - q * math.lgamma(a)
                 + c.alpha * np.log(w).sum())


def dist_prior_logpdf(kind: str, params: tuple, c: MixtureConstants) -> float:
    """The language's parameter-prior denotation, taken literally.

    Identical to proposal_logpdf except for the categorical case, whose
    stated normalizer is not the Dirichlet one; the difference is handled by
    scoring proposals with proposal_logpdf.
    """
    if kind == "nominal":
        w = np.asarray(params)
        if (w <= 0).any():
            return NEG_INF
        q = len(w)
        return float(q * math.lgamma(c.kappa) - math.lgamma(c.kappa)
                     + c.alpha * np.log(w).sum())
    return proposal_logpdf(kind, params, c)


def _nig_logpdf(params: tuple, c: MixtureConstants) -> float:
    v, y = params
    if y <= 0:
        return NEG_INF
    tau = y * y
    return (0.5 * (math.log(c.lam) - math.log(tau) - _LOG_2PI)
            + c.alpha * math.log(c.beta) - math.lgamma(c.alpha)
            - (c.alpha + 1.0) * math.log(tau)
            - (2.0 * c.beta + c.lam * (v - c.eta) ** 2) / (2.0 * tau))


def value_logpdf(kind: str, params: tuple, x: float) -> float:
    if kind == "numeric":
        v, y = params
        z = (x - v) / y
        return -0.5 * z * z - math.log(y) - 0.5 * _LOG_2PI
    if kind == "count":
        y = params[0]
        return x * math.log(y) - y - math.lgamma(x + 1.0)
    idx = int(x) - 1
    if not 0 <= idx < len(params):
        return NEG_INF
    return math.log(params[idx])


def simulate_value(kind: str, params: tuple, rng) -> float:
    if kind == "numeric":
        return float(rng.normal(params[0], params[1]))
    if kind == "count":
        return float(rng.poisson(params[0]))
    cum = np.cumsum(params)
    u = rng.random() * cum[-1]
    return float(1 + int(np.searchsorted(cum, u, side="right").clip(0, len(params) - 1)))


# ---------------------------------------------------------------------------
# working representation (Expr is the interchange form)

@dataclass
class WCluster:
    weight: int
    dists: list  # parameter tuples aligned with the block's column list


@dataclass
class WBlock:
    cols: list   # ascending 1-based column indices
    clusters: list


@dataclass
class WProgram:
    schema: TableSchema
    n: int
    blocks: list

    def canonicalize(self):
        self.blocks.sort(key=lambda b: min(b.cols))
        return self


def program_to_expr(prog: WProgram) -> Expr:
    blocks = []
    for b in prog.blocks:
        clusters = []
        for cl in b.clusters:
            vars_ = []
            for col, params in zip(b.cols, cl.dists):
                kind = prog.schema.columns[col - 1].kind
                dist = Expr(DIST_TAGS[kind], tuple(float(p) for p in params))
                vars_.append(Expr("var", (col, dist)))
            clusters.append(Expr("cluster", (int(cl.weight), *vars_)))
        blocks.append(Expr("block", (tuple(b.cols), *clusters)))
    return Expr("partition", tuple(blocks))


def expr_to_program(p: Expr, schema: TableSchema, n: int) -> WProgram:
    validate_mixture(p, schema, n)
    blocks = []
    for block in p.children:
        cols = list(block.args[0])
        clusters = []
        for cl in block.children:
            dists = []
            for var in cl.children:
                dist = var.children[0]
                dists.append(tuple(float(a) for a in dist.args))
            clusters.append(WCluster(int(cl.args[0]), dists))
        blocks.append(WBlock(cols, clusters))
    return WProgram(schema, n, blocks).canonicalize()


def validate_mixture(p: Expr, schema: TableSchema, n: int) -> None:
    if p.tag != "partition":
        raise MixtureError("program must be a partition")
    seen_cols = []
    for block in p.children:
        if block.tag != "block" or not block.args or not isinstance(block.args[0], tuple):
            raise MixtureError("block needs a column list")
        cols = block.args[0]
        if not cols:
            raise MixtureError("empty block")
        seen_cols.extend(cols)
        if not block.children:
            raise MixtureError("block needs at least one cluster")
        total = 0
        for cl in block.children:
            if cl.tag != "cluster":
                raise MixtureError(f"expected cluster, got {cl.tag}")
            weight = cl.args[0]
            if not isinstance(weight, int) or weight < 1:
                raise MixtureError(f"cluster weight {weight!r} must be a positive integer")
            total += weight
            var_cols = []
            for var in cl.children:
                if var.tag != "var":
                    raise MixtureError(f"expected var, got {var.tag}")
                col = var.args[0]
                var_cols.append(col)
                if not 1 <= col <= schema.m:
                    raise MixtureError(f"var column {col} outside 1..{schema.m}")
                spec = schema.columns[col - 1]
                dist = var.children[0]
                _validate_dist(dist, spec)
            if var_cols != list(cols):
                raise MixtureError(
                    f"cluster variables {var_cols} must match block columns {list(cols)}")
        if total != n:
            raise MixtureError(f"block weights sum to {total}, expected n = {n}")
    if sorted(seen_cols) != list(range(1, schema.m + 1)):
        raise MixtureError(
            f"blocks must partition columns 1..{schema.m}, got {sorted(seen_cols)}")


def _validate_dist(dist: Expr, spec: ColumnSpec) -> None:
    expected = DIST_TAGS[spec.kind]
    if dist.tag != expected:
        raise MixtureError(
            f"column {spec.name!r} is {spec.kind}, needs {expected}, got {dist.tag}")
    params = dist.args
    if any(isinstance(a, (Expr, str, tuple)) for a in params):
        raise MixtureError(f"{dist.tag} parameters must be numeric")
    if dist.tag == "normal":
        if len(params) != 2 or params[1] <= 0:
            raise MixtureError("normal needs (mean, positive spread)")
    elif dist.tag == "poisson":
        if len(params) != 1 or params[0] <= 0:
            raise MixtureError("poisson needs one positive rate")
    else:
        if len(params) != spec.arity:
            raise MixtureError(
                f"categorical for {spec.name!r} needs {spec.arity} weights")
        total = float(sum(params))
        if any(p <= 0 for p in params) or abs(total - 1.0) > 1e-6:
            raise MixtureError("categorical weights must be positive and sum to 1")


# ---------------------------------------------------------------------------
# scoring

def _block_prior(block: WBlock, schema: TableSchema, n: int,
                 c: MixtureConstants) -> float:
    total = math.lgamma(len(block.cols)) - math.lgamma(n + 1)
    for cl in block.clusters:
        total += math.lgamma(cl.weight)
        for col, params in zip(block.cols, cl.dists):
            total += dist_prior_logpdf(schema.columns[col - 1].kind, params, c)
    return total


def _block_loglik(block: WBlock, table: Table) -> float:
    return float(_block_row_logliks(block, table).sum())


def _block_arrays(block: WBlock, schema: TableSchema, n: int):
    l = len(block.cols)
    t = len(block.clusters)
    kinds = np.empty(l, dtype=np.int64)
    pmax = 1
    for i, col in enumerate(block.cols):
        kinds[i] = KIND_CODES[schema.columns[col - 1].kind]
        pmax = max(pmax, *(len(cl.dists[i]) for cl in block.clusters))
    params = np.zeros((t, l, pmax))
    for j, cl in enumerate(block.clusters):
        for i, p in enumerate(cl.dists):
            params[j, i, :len(p)] = p
    log_w = np.log(np.array([cl.weight for cl in block.clusters], dtype=float) / n)
    return kinds, params, log_w


def _block_logliks_from_values(block: WBlock, schema: TableSchema, n: int,
                               values: np.ndarray) -> np.ndarray:
    kinds, params, log_w = _block_arrays(block, schema, n)
    values = np.ascontiguousarray(values)
    return np.asarray(_backend.block_row_logliks(values, kinds, params, log_w))


def _block_row_logliks(block: WBlock, table: Table) -> np.ndarray:
    values = np.empty((table.n, len(block.cols)))
    for i, col in enumerate(block.cols):
        values[:, i] = table.column(col)
    return _block_logliks_from_values(block, table.schema, table.n, values)


def program_prior_logdensity(prog: WProgram,
                             c: MixtureConstants = DEFAULT_CONSTANTS) -> float:
    total = -math.lgamma(prog.schema.m + 1)
    for b in prog.blocks:
        total += _block_prior(b, prog.schema, prog.n, c)
    return total


def program_loglik(prog: WProgram, table: Table) -> float:
    return sum(_block_loglik(b, table) for b in prog.blocks)


def mixture_prior_logdensity(p: Expr, schema: TableSchema, n: int,
                             constants: MixtureConstants = DEFAULT_CONSTANTS) -> float:
    return program_prior_logdensity(expr_to_program(p, schema, n), constants)


def mixture_loglik(p: Expr, table: Table,
                   constants: MixtureConstants = DEFAULT_CONSTANTS) -> float:
    prog = expr_to_program(p, table.schema, table.n)
    return program_loglik(prog, table)


def mixture_logpdf(p: Expr, table_schema: TableSchema, n: int, row: dict) -> float:
    """Log density of one partial row (1-based column index -> value).

    Missing columns are marginalized out; a fully missing row scores 0.
    """
    prog = expr_to_program(p, table_schema, n)
    return _program_row_logpdf(prog, row)


def _program_row_logpdf(prog: WProgram, row: dict) -> float:
    total = 0.0
    for b in prog.blocks:
        values = np.full((1, len(b.cols)), np.nan)
        for i, col in enumerate(b.cols):
            if col in row and row[col] is not None:
                values[0, i] = row[col]
        total += float(_block_logliks_from_values(b, prog.schema, prog.n, values)[0])
    return total


# ---------------------------------------------------------------------------
# simulation

def mixture_simulate(p: Expr, schema: TableSchema, n: int, conditions: dict,
                     n_samples: int, rng) -> list:
    """Rows sampled given the conditioned cells.

    Within each block the cluster posterior is exact: proportional to the
    weight fraction times the conditioned columns' densities.  Returns rows
    as lists over all schema columns (conditioned cells echoed).
    """
    prog = expr_to_program(p, schema, n)
    for col in conditions:
        if not 1 <= col <= schema.m:
            raise MixtureError(f"condition on unknown column {col}")
    rows = []
    block_posts = []
    for b in prog.blocks:
        logs = np.log(np.array([cl.weight for cl in b.clusters], float) / prog.n)
        for j, cl in enumerate(b.clusters):
            for col, params in zip(b.cols, cl.dists):
                if col in conditions and conditions[col] is not None:
                    kind = prog.schema.columns[col - 1].kind
                    logs[j] += value_logpdf(kind, params, conditions[col])
        top = logs.max()
        if top == NEG_INF:
            raise MixtureError("conditions have zero density under every cluster")
        post = np.exp(logs - top)
        post /= post.sum()
        block_posts.append(np.cumsum(post))
    for _ in range(n_samples):
        row = [None] * schema.m
        for col, v in conditions.items():
            row[col - 1] = v
        for b, cum in zip(prog.blocks, block_posts):
            j = int(np.searchsorted(cum, rng.random(), side="right").clip(0, len(cum) - 1))
            cl = b.clusters[j]
            for col, params in zip(b.cols, cl.dists):
                if row[col - 1] is None:
                    kind = prog.schema.columns[col - 1].kind
                    row[col - 1] = simulate_value(kind, params, rng)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# mutation moves

TO_EXISTING = "move-column-to-existing-block"
TO_FRESH = "move-column-to-fresh-block"
SPLIT = "split-cluster-weight"
MERGE = "merge-unit-cluster"
RESAMPLE = "resample-one-distribution-parameters"
TRANSFER = "resample-block-cluster-weights"

MOVE_WEIGHTS = {
    TO_EXISTING: 1.5,
    TO_FRESH: 1.0,
    SPLIT: 1.0,
    MERGE: 1.0,
    RESAMPLE: 3.0,
    TRANSFER: 1.0,
}


def _applicable_moves(prog: WProgram) -> list:
    moves = [TO_FRESH, RESAMPLE]
    if len(prog.blocks) >= 2:
        moves.append(TO_EXISTING)
    if any(cl.weight >= 2 for b in prog.blocks for cl in b.clusters):
        moves.append(SPLIT)
    if any(len(b.clusters) >= 2 and any(cl.weight == 1 for cl in b.clusters)
           for b in prog.blocks):
        moves.append(MERGE)
    if any(len(b.clusters) >= 2 and any(cl.weight >= 2 for cl in b.clusters)
           for b in prog.blocks):
        moves.append(TRANSFER)
    return moves


def _move_type_logprob(prog: WProgram, move: str,
                       weights=None) -> float:
    weights = weights or MOVE_WEIGHTS
    moves = _applicable_moves(prog)
    if move not in moves:
        return NEG_INF
    return math.log(weights[move]) - math.log(sum(weights[m] for m in moves))


def _choose_move(prog: WProgram, rng, weights=None) -> str:
    weights = weights or MOVE_WEIGHTS
    moves = _applicable_moves(prog)
    w = np.array([weights[m] for m in moves])
    cum = np.cumsum(w / w.sum())
    return moves[int(np.searchsorted(cum, rng.random(), side="right").clip(0, len(moves) - 1))]


def _copy_program(prog: WProgram) -> WProgram:
    return WProgram(prog.schema, prog.n,
                    [WBlock(list(b.cols),
                            [WCluster(cl.weight, list(cl.dists)) for cl in b.clusters])
                     for b in prog.blocks])


def _split_donors(prog: WProgram) -> list:
    return [(bi, ci) for bi, b in enumerate(prog.blocks)
            for ci, cl in enumerate(b.clusters) if cl.weight >= 2]


def _merge_victims(prog: WProgram) -> list:
    return [(bi, ci) for bi, b in enumerate(prog.blocks) if len(b.clusters) >= 2
            for ci, cl in enumerate(b.clusters) if cl.weight == 1]


def _transfer_donors(prog: WProgram) -> list:
    return [(bi, ci) for bi, b in enumerate(prog.blocks) if len(b.clusters) >= 2
            for ci, cl in enumerate(b.clusters) if cl.weight >= 2]


def _param_slots(prog: WProgram) -> int:
    return sum(len(b.clusters) * len(b.cols) for b in prog.blocks)


@dataclass
class MutationProposal:
    program: WProgram
    log_accept: float
    move: str


def _score_blocks(blocks, schema, n, table, c) -> float:
    total = 0.0
    for b in blocks:
        total += _block_prior(b, schema, n, c)
        total += _block_loglik(b, table)
    return total


def propose_mutation(prog: WProgram, table: Table, rng,
                     c: MixtureConstants = DEFAULT_CONSTANTS,
                     move_weights=None) -> MutationProposal:
    move = _choose_move(prog, rng, move_weights)
    schema, n = prog.schema, prog.n
    new = _copy_program(prog)
    logq_fwd = _move_type_logprob(prog, move, move_weights)
    logq_rev = 0.0
    old_blocks: list = []
    new_blocks: list = []

    def kind_of(col):
        return schema.columns[col - 1].kind

    def arity_of(col):
        return schema.columns[col - 1].arity

    if move in (TO_EXISTING, TO_FRESH):
        col = int(rng.integers(schema.m)) + 1
        logq_fwd += -math.log(schema.m)
        src_idx = next(i for i, b in enumerate(new.blocks) if col in b.cols)
        src = new.blocks[src_idx]
        k = len(new.blocks)
        # detach the column, remembering its old distributions
        pos = src.cols.index(col)
        old_dists = [cl.dists[pos] for cl in src.clusters]
        src.cols.pop(pos)
        for cl in src.clusters:
            cl.dists.pop(pos)
        src_deleted = not src.cols
        if src_deleted:
            new.blocks.pop(src_idx)

        if move == TO_EXISTING:
            targets = [b for b in new.blocks if b is not src]
            logq_fwd += -math.log(k - 1)
            tgt = targets[int(rng.integers(len(targets)))]
        else:
            tgt = WBlock([], [WCluster(n, [])])
            new.blocks.append(tgt)
        ins = int(np.searchsorted(np.array(tgt.cols), col)) if tgt.cols else 0
        tgt.cols.insert(ins, col)
        for cl in tgt.clusters:
            params = sample_dist(kind_of(col), arity_of(col), rng, c)
            cl.dists.insert(ins, params)
            logq_fwd += proposal_logpdf(kind_of(col), params, c)
        new.canonicalize()

        # reverse move: put the column back where it came from
        k_new = len(new.blocks)
        if not src_deleted:
            logq_rev += _move_type_logprob(new, TO_EXISTING, move_weights)
            logq_rev += -math.log(schema.m) - math.log(k_new - 1)
            for params in old_dists:
                logq_rev += proposal_logpdf(kind_of(col), params, c)
        else:
            # the reverse is a fresh-block move; it can only recreate a
            # single-cluster block of weight n (one old distribution)
            if len(old_dists) == 1:
                logq_rev += _move_type_logprob(new, TO_FRESH, move_weights)
                logq_rev += -math.log(schema.m)
                logq_rev += proposal_logpdf(kind_of(col), old_dists[0], c)
            else:
                logq_rev = NEG_INF
        old_blocks = _affected_old(prog, new, col, move)
        new_blocks = _affected_new(prog, new, col, move)

    elif move == SPLIT:
        donors = _split_donors(new)
        bi, ci = donors[int(rng.integers(len(donors)))]
        logq_fwd += -math.log(len(donors))
        block = new.blocks[bi]
        t = len(block.clusters)
        pos = int(rng.integers(t + 1))
        logq_fwd += -math.log(t + 1)
        dists = []
        for col in block.cols:
            params = sample_dist(kind_of(col), arity_of(col), rng, c)
            dists.append(params)
            logq_fwd += proposal_logpdf(kind_of(col), params, c)
        block.clusters[ci].weight -= 1
        block.clusters.insert(pos, WCluster(1, dists))
        logq_rev += _move_type_logprob(new, MERGE, move_weights)
        logq_rev += -math.log(len(_merge_victims(new))) - math.log(t)
        old_blocks = [prog.blocks[bi]]
        new_blocks = [block]

    elif move == MERGE:
        victims = _merge_victims(new)
        bi, ci = victims[int(rng.integers(len(victims)))]
        logq_fwd += -math.log(len(victims))
        block = new.blocks[bi]
        t = len(block.clusters)
        others = [j for j in range(t) if j != ci]
        rj = others[int(rng.integers(len(others)))]
        logq_fwd += -math.log(t - 1)
        victim = block.clusters.pop(ci)
        recipient = block.clusters[rj if rj < ci else rj - 1]
        recipient.weight += 1
        logq_rev += _move_type_logprob(new, SPLIT, move_weights)
        # the reverse split has t-1 clusters, hence t insertion slots
        logq_rev += -math.log(len(_split_donors(new))) - math.log(t)
        for col, params in zip(block.cols, victim.dists):
            logq_rev += proposal_logpdf(kind_of(col), params, c)
        old_blocks = [prog.blocks[bi]]
        new_blocks = [block]

    elif move == TRANSFER:
        donors = _transfer_donors(new)
        bi, ci = donors[int(rng.integers(len(donors)))]
        logq_fwd += -math.log(len(donors))
        block = new.blocks[bi]
        t = len(block.clusters)
        others = [j for j in range(t) if j != ci]
        rj = others[int(rng.integers(len(others)))]
        logq_fwd += -math.log(t - 1)
        block.clusters[ci].weight -= 1
        block.clusters[rj].weight += 1
        logq_rev += _move_type_logprob(new, TRANSFER, move_weights)
        logq_rev += -math.log(len(_transfer_donors(new))) - math.log(t - 1)
        old_blocks = [prog.blocks[bi]]
        new_blocks = [block]

    else:  # RESAMPLE
        slots = _param_slots(new)
        pick = int(rng.integers(slots))
        logq_fwd += -math.log(slots)
        logq_rev += -math.log(slots)
        for bi, block in enumerate(new.blocks):
            span = len(block.clusters) * len(block.cols)
            if pick < span:
                ci, pos = divmod(pick, len(block.cols))
                col = block.cols[pos]
                old_params = block.clusters[ci].dists[pos]
                params = sample_dist(kind_of(col), arity_of(col), rng, c)
                block.clusters[ci].dists[pos] = params
                logq_fwd += proposal_logpdf(kind_of(col), params, c)
                logq_rev += _move_type_logprob(new, RESAMPLE, move_weights)
                logq_rev += proposal_logpdf(kind_of(col), old_params, c)
                old_blocks = [prog.blocks[bi]]
                new_blocks = [block]
                break
            pick -= span

    if logq_rev == NEG_INF:
        return MutationProposal(new, NEG_INF, move)
    delta = (_score_blocks(new_blocks, schema, n, table, c)
             - _score_blocks(old_blocks, schema, n, table, c))
    return MutationProposal(new, delta + logq_rev - logq_fwd, move)


def _find_block(prog: WProgram, col: int) -> int:
    return next(i for i, b in enumerate(prog.blocks) if col in b.cols)


def _affected_old(prog, new, col, move):
    """Blocks of the original program touched by a column move."""
    src = _find_block(prog, col)
    touched = {src}
    if move == TO_EXISTING:
        new_home = _find_block(new, col)
        new_cols = set(new.blocks[new_home].cols) - {col}
        for i, b in enumerate(prog.blocks):
            if set(b.cols) == new_cols:
                touched.add(i)
    return [prog.blocks[i] for i in sorted(touched)]


def _affected_new(prog, new, col, move):
    """Blocks of the proposal touched by a column move."""
    old_src_cols = set(prog.blocks[_find_block(prog, col)].cols) - {col}
    touched = {_find_block(new, col)}
    if old_src_cols:
        for i, b in enumerate(new.blocks):
            if set(b.cols) == old_src_cols:
                touched.add(i)
    return [new.blocks[i] for i in sorted(touched)]


def mutate_chain(chain: Chain, table: Table,
                 c: MixtureConstants = DEFAULT_CONSTANTS,
                 move_weights=None) -> Chain:
    """One MH mutation step on a chain whose state is a WProgram."""
    prop = propose_mutation(chain.current, table, chain.rng, c, move_weights)
    chain.steps += 1
    u = chain.rng.random()
    if math.log(u) < prop.log_accept:
        chain.current = prop.program
        chain.logprior = program_prior_logdensity(prop.program, c)
        chain.loglik = program_loglik(prop.program, table)
        chain.accepts += 1
    return chain


def mixture_mutate(p: Expr, table: Table, rng,
                   constants: MixtureConstants = DEFAULT_CONSTANTS) -> Expr:
    """Apply one MH-corrected mutation; returns the new (or unchanged) program."""
    prog = expr_to_program(p, table.schema, table.n)
    prop = propose_mutation(prog, table, rng, constants)
    if math.log(rng.random()) < prop.log_accept:
        return program_to_expr(prop.program)
    return p


def initial_program(table: Table, rng,
                    constants: MixtureConstants = DEFAULT_CONSTANTS) -> WProgram:
    """One block per column, a single full-weight cluster each."""
    blocks = []
    for col, spec in enumerate(table.schema.columns, start=1):
        params = sample_dist(spec.kind, spec.arity, rng, constants)
        blocks.append(WBlock([col], [WCluster(table.n, [params])]))
    return WProgram(table.schema, table.n, blocks)


def mixture_synthesize(table: Table, config: SynthesisConfig,
                       constants: MixtureConstants = DEFAULT_CONSTANTS,
                       move_weights=None) -> Ensemble:
    """MCMC over programs for the given table; deterministic per config."""

    def make_chain(rng):
        prog = initial_program(table, rng, constants)
        return Chain(current=prog,
                     loglik=program_loglik(prog, table),
                     logprior=program_prior_logdensity(prog, constants),
                     rng=rng)

    def step_fn(chain, step):
        mutate_chain(chain, table, constants, move_weights)

    chains = run_chains(config, make_chain, step_fn)
    members = [EnsembleMember(program_to_expr(ch.current), ch.logprior, ch.loglik)
               for ch in chains]
    meta = {
        "seed": config.seed,
        "chains": config.chains,
        "steps": config.steps,
        "schedule": config.schedule.spec(),
        "dsl": "mixture",
        "schema": table.schema.spec(),
        "rows": table.n,
        "acceptance_rate": (sum(ch.accepts for ch in chains)
                            / max(1, sum(ch.steps for ch in chains))),
    }
    return Ensemble(members, meta)
