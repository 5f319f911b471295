"""Ensemble files: '#key: value' header lines, then one program per line
as logprior<TAB>loglik<TAB>printed-sexpr.  Text, diffable, append-safe."""
from __future__ import annotations

from pathlib import Path

from .sexpr import parse, print_expr
from .synthesis import Ensemble, EnsembleMember

_INT_KEYS = {"seed", "chains", "steps", "rows"}
_FLOAT_KEYS = {"acceptance_rate"}
_BOOL_KEYS = {"standardize"}
_KEY_ORDER = ("format", "dsl", "seed", "chains", "steps", "schedule",
              "grammar_hash", "schema", "rows", "standardize", "acceptance_rate")

FORMAT = "progsynth-ensemble-v1"


class EnsembleFormatError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps_ensemble(ensemble: Ensemble) -> str:
    meta = dict(ensemble.meta)
    meta.setdefault("format", FORMAT)
    lines = []
    emitted = set()
    for key in _KEY_ORDER:
        if key in meta:
            lines.append(f"#{key.replace('_', '-')}: {_fmt(meta[key])}")
            emitted.add(key)
    for key in sorted(meta):
        if key not in emitted:
            lines.append(f"#{key.replace('_', '-')}: {_fmt(meta[key])}")
    for m in ensemble.members:
        lines.append(f"{_fmt(float(m.logprior))}\t{_fmt(float(m.loglik))}\t"
                     f"{print_expr(m.expr)}")
    return "\n".join(lines) + "\n"


def loads_ensemble(text: str) -> Ensemble:
    meta = {}
    members = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise EnsembleFormatError(f"line {lineno}: malformed header")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key in _INT_KEYS:
                meta[key] = int(value)
            elif key in _FLOAT_KEYS:
                meta[key] = float(value)
            elif key in _BOOL_KEYS:
                meta[key] = value == "true"
            else:
                meta[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise EnsembleFormatError(
                f"line {lineno}: expected logprior<TAB>loglik<TAB>program")
        try:
            logprior, loglik = float(parts[0]), float(parts[1])
        except ValueError:
            raise EnsembleFormatError(f"line {lineno}: bad score") from None
        members.append(EnsembleMember(parse(parts[2]), logprior, loglik))
    if meta.get("format", FORMAT) != FORMAT:
        raise EnsembleFormatError(f"unknown format {meta['format']!r}")
    return Ensemble(members, meta)


def save_ensemble(ensemble: Ensemble, path) -> None:
    Path(path).write_text(dumps_ensemble(ensemble))


def load_ensemble(path) -> Ensemble:
    return loads_ensemble(Path(path).read_text())
