"""Command-line surface.

Subcommands: check-grammar, synth, query, forecast, simulate, logpdf,
translate.  Every command is a deterministic function of its inputs and
--seed, down to the bytes of the files it writes.

Exit codes: 0 ok, 1 semantic failure (invalid/inconsistent grammar), 2
usage or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import ensembles, gp, mixture, queries, translate
from .grammar import (GrammarError, GrammarFileError, check_consistency,
                      grammar_hash, load_grammar, validate)
from .mixture import MixtureError, TableError
from .queries import PropertyParseError
from .sexpr import SexprError
from .synthesis import Ensemble, MoveSchedule, SynthesisConfig, synthesize

USAGE_ERROR = 2
SEMANTIC_ERROR = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = USAGE_ERROR):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# data loading

def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {path}")
    return p.read_text()


def load_series(path: str) -> gp.TimeSeries:
    """Two-column CSV with one header line: x then y."""
    text = _read_text(path)
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise CliError(f"{path}: need a header and at least one data row")
    if len(rows[0]) != 2:
        raise CliError(f"{path}: expected two columns (x, y), got {len(rows[0])}")
    xs, ys = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise CliError(f"{path}: row {i}: expected 2 cells, got {len(row)}")
        for j, cell in enumerate(row, start=1):
            try:
                float(cell)
            except ValueError:
                raise CliError(f"{path}: row {i}, column {j}: "
                               f"not a number: {cell.strip()!r}") from None
        xs.append(float(row[0]))
        ys.append(float(row[1]))
    return gp.TimeSeries(np.array(xs), np.array(ys))


def _parse_probe(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise CliError(f"bad probe spec {spec!r}; expected lo:hi:count")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise CliError(f"bad probe spec {spec!r}") from None
    if count < 1:
        raise CliError("probe count must be >= 1")
    return np.linspace(lo, hi, count)


def _parse_conditions(spec: str, schema: mixture.TableSchema) -> dict:
    conditions = {}
    if not spec:
        return conditions
    for part in spec.split(","):
        name, sep, value = part.partition("=")
        if not sep:
            raise CliError(f"bad condition {part!r}; expected name=value")
        idx = _schema_index(schema, name.strip())
        col = schema.columns[idx - 1]
        conditions[idx] = mixture._check_cell(col, value.strip(), 0)
    return conditions


def _schema_index(schema: mixture.TableSchema, name: str) -> int:
    try:
        return schema.index_of(name)
    except TableError as exc:
        raise CliError(str(exc)) from None


def _ensemble_schema(ens: Ensemble) -> mixture.TableSchema:
    if ens.meta.get("dsl") != "mixture":
        raise CliError("this command needs a mixture ensemble")
    try:
        return mixture.TableSchema.from_spec(ens.meta["schema"])
    except (KeyError, ValueError):
        raise CliError("ensemble file lacks a usable #schema header") from None


def _load_ensemble(path: str) -> Ensemble:
    text = _read_text(path)
    try:
        return ensembles.loads_ensemble(text)
    except (ensembles.EnsembleFormatError, SexprError) as exc:
        raise CliError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# commands

def cmd_check_grammar(args) -> int:
    if args.grammar == "gp":
        g = gp.gp_grammar()
    else:
        try:
            g = load_grammar(_read_text(args.grammar))
        except GrammarFileError as exc:
            raise CliError(f"{args.grammar}: {exc}") from None
    report = validate(g)
    if not report.ok:
        for violation in report.violations:
            print(f"violation: {violation}")
        print("invalid grammar")
        return SEMANTIC_ERROR
    consistency = check_consistency(g)
    print("grammar valid")
    print(f"spectral radius: {consistency.spectral_radius:.8f}")
    moduli = ", ".join(f"{m:.8f}" for m in consistency.eigenvalue_moduli[:6])
    print(f"eigenvalue moduli: {moduli}")
    print(f"consistent: {'yes' if consistency.consistent else 'no'}")
    return 0 if consistency.consistent else SEMANTIC_ERROR


def _run_config(args) -> SynthesisConfig:
    try:
        schedule = MoveSchedule.parse(args.schedule)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return SynthesisConfig(chains=args.chains, steps=args.steps,
                           seed=args.seed, schedule=schedule)


def cmd_synth(args) -> int:
    config = _run_config(args)
    if args.dsl == "gp":
        series = load_series(args.data)
        standardize = bool(args.standardize)
        if standardize:
            series = gp.Standardization.fit(series).apply(series)
        g = gp.gp_grammar()
        ens = synthesize(g, gp.GpLikelihood(), series, config)
        ens.meta.update(dsl="gp", grammar_hash=grammar_hash(g),
                        rows=series.n, standardize=standardize)
    else:
        if args.standardize:
            raise CliError("--standardize only applies to the gp language")
        table = _load_mixture_table(args.data)
        ens = mixture.mixture_synthesize(table, config)
        ens.meta["grammar_hash"] = _schema_hash(table.schema)
    ensembles.save_ensemble(ens, args.out)
    joints = [m.logprior + m.loglik for m in ens.members]
    print(f"wrote {len(ens.members)} programs to {args.out}")
    print(f"acceptance rate: {ens.meta['acceptance_rate']:.4f}")
    print(f"log joint: mean {np.mean(joints):.4f} "
          f"min {min(joints):.4f} max {max(joints):.4f}")
    return 0


def _schema_hash(schema: mixture.TableSchema) -> str:
    import hashlib

    return hashlib.sha256(schema.spec().encode()).hexdigest()[:12]


def _load_mixture_table(path: str) -> mixture.Table:
    return mixture.load_table(_read_text(path))


def _property_list(args) -> list:
    props = []
    if args.property:
        props.append(queries.parse_property(args.property))
    if args.properties:
        for lineno, raw in enumerate(_read_text(args.properties).splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, sep, expr = line.partition(":")
            if not sep:
                raise CliError(f"{args.properties}: line {lineno}: "
                               "expected 'name: expression'")
            props.append(queries.parse_property(expr.strip(), name.strip()))
    return props


def cmd_query(args) -> int:
    ens = _load_ensemble(args.ensemble)
    if not ens.members:
        raise CliError("empty ensemble", SEMANTIC_ERROR)
    programs = ens.programs()
    results = []
    if args.pair:
        schema = _ensemble_schema(ens)
        names = [s.strip() for s in args.pair.split(",")]
        if len(names) != 2:
            raise CliError("--pair needs two comma-separated column names")
        a, b = (_schema_index(schema, n) for n in names)
        prob = queries.mixture_same_block(programs, a, b)
        results.append((f"same-block({names[0]},{names[1]})", prob))
    props = _property_list(args)
    if props and ens.meta.get("dsl") == "mixture":
        raise CliError("count properties apply to gp ensembles")
    for prop in props:
        results.append((prop.name, queries.estimate_property(programs, prop)))
    if not results:
        raise CliError("nothing to query: give --property, --properties or --pair")
    width = max(len(name) for name, _ in results)
    for name, prob in results:
        print(f"{name:<{width}}  {prob:.4f}")
    print()
    for name, prob in results:
        print(f"{name}={prob!r}")
    return 0


def _member_predictions(ens, train, probe):
    for m in ens.members:
        yield gp.gp_predict(m.expr, train, probe)


def cmd_forecast(args) -> int:
    ens = _load_ensemble(args.ensemble)
    if ens.meta.get("dsl") != "gp":
        raise CliError("forecast needs a gp ensemble")
    train = load_series(args.train)
    std = None
    if ens.meta.get("standardize"):
        std = gp.Standardization.fit(train)
        train = std.apply(train)
    probe = _parse_probe(args.probe)
    probe_model = std.apply_x(probe) if std else probe
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0xF0)))
    means, variances, samples = [], [], []
    for pred in _member_predictions(ens, train, probe_model):
        means.append(pred.mean)
        variances.append(np.diag(pred.cov).copy())
        for _ in range(args.member_samples):
            samples.append(_sample_mvn(pred, rng))
    means = np.array(means)
    variances = np.array(variances)
    pool_mean = means.mean(axis=0)
    pool_var = (variances + means**2).mean(axis=0) - pool_mean**2
    if std:
        pool_mean = pool_mean * std.y_std + std.y_mean
        pool_var = pool_var * std.y_std**2
        samples = [s * std.y_std + std.y_mean for s in samples]
    header = ["probe_x", "mean", "var"]
    columns = [probe, pool_mean, pool_var]
    n_members = len(ens.members)
    for i, s in enumerate(samples):
        member, rep = divmod(i, args.member_samples) if args.member_samples else (0, 0)
        header.append(f"y{member:03d}_{rep}")
        columns.append(s)
    _write_csv(args.out, header, columns)
    print(f"wrote forecast over {len(probe)} probe points "
          f"({n_members} members) to {args.out}")
    if args.heldout:
        heldout = load_series(args.heldout)
        lls = []
        for m in ens.members:
            if std:
                ll = gp.gp_heldout_loglik(m.expr, train, std.apply(heldout))
                ll -= heldout.n * math.log(std.y_std)
            else:
                ll = gp.gp_heldout_loglik(m.expr, train, heldout)
            lls.append(ll)
        pooled = _logmeanexp(np.array(lls))
        print(f"heldout_loglik {pooled!r}")
    return 0


def _sample_mvn(pred: gp.GpPredictive, rng) -> np.ndarray:
    w, v = np.linalg.eigh(pred.cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    return pred.mean + root @ rng.standard_normal(len(pred.mean))


def _logmeanexp(values: np.ndarray) -> float:
    top = values.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.mean(np.exp(values - top))))


def cmd_simulate(args) -> int:
    ens = _load_ensemble(args.ensemble)
    schema = _ensemble_schema(ens)
    n_rows = int(ens.meta.get("rows", 0))
    if n_rows < 1:
        raise CliError("ensemble file lacks a #rows header")
    conditions = _parse_conditions(args.conditions, schema)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0x51)))
    members = ens.members
    rows = []
    for _ in range(args.num):
        member = members[int(rng.integers(len(members)))]
        row = mixture.mixture_simulate(member.expr, schema, n_rows, conditions,
                                       1, rng)[0]
        rows.append(row)
    table = mixture.make_table(schema, rows)
    Path(args.out).write_text(mixture.dump_table(table))
    print(f"wrote {len(rows)} simulated rows to {args.out}")
    return 0


def cmd_logpdf(args) -> int:
    ens = _load_ensemble(args.ensemble)
    schema = _ensemble_schema(ens)
    n_rows = int(ens.meta.get("rows", 0))
    if n_rows < 1:
        raise CliError("ensemble file lacks a #rows header")
    table = _load_rows_with_schema(args.rows, schema)
    per_member = []
    for m in ens.members:
        prog = mixture.expr_to_program(m.expr, schema, n_rows)
        row_lls = []
        for i in range(table.n):
            row = {c + 1: (None if np.isnan(table.columns[c][i])
                           else float(table.columns[c][i]))
                   for c in range(schema.m)}
            row = {k: v for k, v in row.items() if v is not None}
            row_lls.append(mixture._program_row_logpdf(prog, row))
        per_member.append(row_lls)
    matrix = np.array(per_member)  # members x rows
    pooled = np.array([_logmeanexp(matrix[:, i]) for i in range(table.n)])
    spread = matrix.std(axis=0)
    _write_csv(args.out, ["row", "logpdf", "spread"],
               [np.arange(1, table.n + 1), pooled, spread])
    print(f"wrote per-row log densities for {table.n} rows to {args.out}")
    print(f"mean logpdf {pooled.mean()!r}")
    return 0


def _load_rows_with_schema(path: str, schema: mixture.TableSchema) -> mixture.Table:
    table = _load_mixture_table(path)
    got = [(c.name, c.kind) for c in table.schema.columns]
    want = [(c.name, c.kind) for c in schema.columns]
    if got != want:
        raise CliError(f"{path}: columns {got} do not match ensemble schema {want}")
    # re-validate cells against the ensemble's arities
    rows = [[None if np.isnan(col[i]) else float(col[i]) for col in table.columns]
            for i in range(table.n)]
    try:
        return mixture.make_table(schema, rows)
    except TableError as exc:
        raise CliError(f"{path}: {exc}") from None


def cmd_translate(args) -> int:
    ens = _load_ensemble(args.ensemble)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dsl = ens.meta.get("dsl")
    for i, m in enumerate(ens.members):
        if dsl == "mixture":
            text = translate.mixture_to_venture(m.expr).text
        else:
            text = translate.gp_to_venture(m.expr).text
        (out_dir / f"program_{i:03d}.vnts").write_text(text)
    print(f"wrote {len(ens.members)} .vnts files to {out_dir}")
    return 0


def _write_csv(path, header, columns) -> None:
    lines = [",".join(header)]
    for row in zip(*columns):
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(repr(float(v)))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progsynth",
        description="Synthesize probabilistic model programs by MCMC and "
                    "query, forecast, simulate or translate them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-grammar", help="validate a grammar and test consistency")
    p.add_argument("grammar", help="builtin name ('gp') or grammar file path")
    p.set_defaults(fn=cmd_check_grammar)

    p = sub.add_parser("synth", help="synthesize an ensemble from data")
    p.add_argument("--dsl", choices=("gp", "mixture"), required=True)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--out", required=True, help="ensemble file to write")
    p.add_argument("--chains", type=int, default=60)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", default="uniform",
                   help="uniform | alternating[:STRUCT:PARAM]")
    p.add_argument("--standardize", action="store_true",
                   help="gp only: zero-mean/unit-variance ys, xs to [0,1]")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("query", help="estimate structure probabilities")
    p.add_argument("ensemble")
    p.add_argument("--property", help="property expression, e.g. 'per>0 or cp>0'")
    p.add_argument("--properties", help="file of 'name: expression' lines")
    p.add_argument("--pair", help="mixture: two column names, e.g. 'a,b'")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("forecast", help="pooled GP forecasts at probe points")
    p.add_argument("ensemble")
    p.add_argument("--train", required=True, help="training CSV (x,y)")
    p.add_argument("--probe", required=True, help="grid spec lo:hi:count")
    p.add_argument("--heldout", help="CSV scored under the predictive")
    p.add_argument("--member-samples", type=int, default=0,
                   help="sampled trajectories per ensemble member")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("simulate", help="sample rows from a mixture ensemble")
    p.add_argument("ensemble")
    p.add_argument("-n", "--num", type=int, default=100)
    p.add_argument("--conditions", default="", help="name=value,name=value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("logpdf", help="ensemble-averaged log density of rows")
    p.add_argument("ensemble")
    p.add_argument("--rows", required=True, help="CSV of rows to score")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_logpdf)

    p = sub.add_parser("translate", help="emit Venture-syntax .vnts files")
    p.add_argument("ensemble")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_translate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TableError, MixtureError, SexprError, PropertyParseError,
            GrammarError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
