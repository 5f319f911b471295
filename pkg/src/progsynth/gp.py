"""Gaussian-process time-series language: grammar, covariance semantics,
likelihood, and posterior-predictive forecasting.

Kernels are tagged expressions over {const, wn, lin, se, per, +, *, cp} with
gamma-distributed positive parameters.  The likelihood is a zero-mean
multivariate normal over the observed ys whose covariance gets 0.01 added on
every entry with exactly equal x values; that noise floor also bounds the
likelihood by 0.01**-0.5 = 10.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from . import _backend
from .grammar import GammaTerminal, Grammar, Rule
from .sexpr import Expr

JITTER = 0.01
LOG_LIK_BOUND = -0.5 * math.log(JITTER)  # log 10

BASE_KERNEL_TAGS = ("const", "wn", "lin", "se", "per")
OPERATOR_TAGS = ("+", "*", "cp")
PARAM_TAG = "gamma"

_OPCODE = {
    "const": _backend.OP_CONST,
    "wn": _backend.OP_WN,
    "lin": _backend.OP_LIN,
    "se": _backend.OP_SE,
    "per": _backend.OP_PER,
    "+": _backend.OP_ADD,
    "*": _backend.OP_MUL,
    "cp": _backend.OP_CP,
}


class KernelError(ValueError):
    """Expression is not a well-formed kernel program."""


class GpFactorizationError(RuntimeError):
    """Covariance factorization failed (degenerate model, e.g. duplicated
    time points make every kernel's covariance singular)."""


def gp_grammar() -> Grammar:
    """The built-in kernel grammar; validates and is consistent
    (spectral radius ~0.785)."""
    k_rules = [
        Rule("K", "const", ("H",), 0.14),
        Rule("K", "wn", ("H",), 0.14),
        Rule("K", "lin", ("H",), 0.14),
        Rule("K", "se", ("H",), 0.14),
        Rule("K", "per", ("H", "H"), 0.14),
        Rule("K", "+", ("K", "K"), 0.135),
        Rule("K", "*", ("K", "K"), 0.135),
        Rule("K", "cp", ("H", "K", "K"), 0.03),
    ]
    h_rules = [Rule("H", "gamma", (), 1.0, GammaTerminal(1.0, 1.0))]
    return Grammar(k_rules + h_rules, start="K", nonterminals=("K", "H"))


@dataclass(frozen=True)
class TimeSeries:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 1 or ys.ndim != 1 or len(xs) != len(ys):
            raise ValueError("xs and ys must be equal-length vectors")
        if len(xs) < 1:
            raise ValueError("need at least one observation")
        if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
            raise ValueError("time series values must be finite")

    @property
    def n(self) -> int:
        return len(self.xs)


@dataclass
class GpPredictive:
    mean: np.ndarray
    cov: np.ndarray


def _param_value(e: Expr, where: str) -> float:
    if e.tag != PARAM_TAG or len(e.args) != 1 or isinstance(e.args[0], (Expr, str, tuple)):
        raise KernelError(f"{where}: expected (gamma v), got {e}")
    v = float(e.args[0])
    if not (v > 0 and math.isfinite(v)):
        raise KernelError(f"{where}: gamma parameter must be positive, got {v}")
    return v


def validate_kernel(e: Expr) -> None:
    """Raises KernelError unless e satisfies the kernel arity rules."""
    kids = e.children
    if e.args != tuple(kids):
        raise KernelError(f"kernel node {e.tag} carries stray atoms")
    if e.tag in ("const", "wn", "lin", "se"):
        if len(kids) != 1:
            raise KernelError(f"{e.tag} takes one parameter")
        _param_value(kids[0], e.tag)
    elif e.tag == "per":
        if len(kids) != 2:
            raise KernelError("per takes two parameters")
        for kid in kids:
            _param_value(kid, "per")
    elif e.tag in ("+", "*"):
        if len(kids) != 2:
            raise KernelError(f"{e.tag} takes two kernels")
        for kid in kids:
            validate_kernel(kid)
    elif e.tag == "cp":
        if len(kids) != 3:
            raise KernelError("cp takes a parameter and two kernels")
        _param_value(kids[0], "cp")
        validate_kernel(kids[1])
        validate_kernel(kids[2])
    else:
        raise KernelError(f"unknown kernel tag {e.tag!r}")


def flatten_kernel(e: Expr):
    """Postorder opcode/parameter arrays for the matrix kernels."""
    codes, p0, p1 = [], [], []

    def walk(node: Expr):
        if node.tag in ("+", "*"):
            walk(node.children[0])
            walk(node.children[1])
            codes.append(_OPCODE[node.tag])
            p0.append(0.0)
            p1.append(0.0)
        elif node.tag == "cp":
            walk(node.children[1])
            walk(node.children[2])
            codes.append(_OPCODE["cp"])
            p0.append(_param_value(node.children[0], "cp"))
            p1.append(0.0)
        elif node.tag == "per":
            codes.append(_OPCODE["per"])
            p0.append(_param_value(node.children[0], "per"))
            p1.append(_param_value(node.children[1], "per"))
        elif node.tag in ("const", "wn", "lin", "se"):
            codes.append(_OPCODE[node.tag])
            p0.append(_param_value(node.children[0], node.tag))
            p1.append(0.0)
        else:
            raise KernelError(f"unknown kernel tag {node.tag!r}")

    walk(e)
    return (np.asarray(codes, dtype=np.int64),
            np.asarray(p0, dtype=np.float64),
            np.asarray(p1, dtype=np.float64))


def cov_dense(k: Expr, x1, x2) -> np.ndarray:
    codes, p0, p1 = flatten_kernel(k)
    x1 = np.ascontiguousarray(x1, dtype=np.float64)
    x2 = np.ascontiguousarray(x2, dtype=np.float64)
    return np.asarray(_backend.gp_cov(codes, p0, p1, x1, x2))


def cov_eval(k: Expr, x: float, x2: float) -> float:
    return float(cov_dense(k, np.array([x]), np.array([x2]))[0, 0])


def _equal_grid(x1, x2) -> np.ndarray:
    return (np.asarray(x1)[:, None] == np.asarray(x2)[None, :])


def cov_matrix(k: Expr, xs) -> np.ndarray:
    """Covariance over xs plus 0.01 on every exactly-equal-x pair."""
    xs = np.asarray(xs, dtype=float)
    return cov_dense(k, xs, xs) + JITTER * _equal_grid(xs, xs)


def _chol(m: np.ndarray, k: Expr):
    try:
        return cho_factor(m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise GpFactorizationError(
            f"covariance factorization failed for kernel {k} "
            "(duplicated time points make the model degenerate)") from exc


def gp_loglik(k: Expr, ts: TimeSeries) -> float:
    """Zero-mean multivariate-normal log density of ts.ys; always <= log 10."""
    validate_kernel(k)
    m = cov_matrix(k, ts.xs)
    cf = _chol(m, k)
    alpha = cho_solve(cf, ts.ys)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    return float(-0.5 * ts.ys @ alpha - 0.5 * logdet - 0.5 * ts.n * math.log(2 * math.pi))


class GpLikelihood:
    """Likelihood model adapter for the synthesis engine.

    Degenerate covariances (possible only with duplicated xs) score -inf so
    chains simply avoid them.
    """

    log_cmax = LOG_LIK_BOUND

    def loglik(self, expr: Expr, data: TimeSeries) -> float:
        try:
            return gp_loglik(expr, data)
        except GpFactorizationError:
            return float("-inf")


def gp_predict(k: Expr, train: TimeSeries, probe_xs) -> GpPredictive:
    """Posterior predictive at probe_xs.

    Train-train and probe-probe covariances carry the equal-x jitter; the
    cross block does not (probe observations get fresh noise).  The returned
    covariance is eigen-clipped to PSD.
    """
    validate_kernel(k)
    probe_xs = np.asarray(probe_xs, dtype=float)
    a = cov_matrix(k, train.xs)
    b = cov_dense(k, train.xs, probe_xs)
    d = cov_dense(k, probe_xs, probe_xs) + JITTER * _equal_grid(probe_xs, probe_xs)
    cf = _chol(a, k)
    mean = b.T @ cho_solve(cf, train.ys)
    cov = d - b.T @ cho_solve(cf, b)
    cov = 0.5 * (cov + cov.T)
    w, v = eigh(cov)
    if w[0] < 0.0:
        cov = (v * np.clip(w, 0.0, None)) @ v.T
        cov = 0.5 * (cov + cov.T)
    return GpPredictive(mean=mean, cov=cov)


def gp_heldout_loglik(k: Expr, train: TimeSeries, test: TimeSeries) -> float:
    """Log density of test.ys under the posterior predictive at test.xs.

    For train/test x sets that do not overlap this factorizes exactly:
    it equals gp_loglik on the concatenated series minus gp_loglik(train).
    """
    pred = gp_predict(k, train, test.xs)
    resid = test.ys - pred.mean
    cf = _chol(pred.cov, k)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    quad = float(resid @ cho_solve(cf, resid))
    return -0.5 * (quad + logdet + test.n * math.log(2 * math.pi))


@dataclass(frozen=True)
class Standardization:
    x_lo: float
    x_hi: float
    y_mean: float
    y_std: float

    def apply(self, ts: TimeSeries) -> TimeSeries:
        return TimeSeries(self.apply_x(ts.xs), (ts.ys - self.y_mean) / self.y_std)

    def apply_x(self, xs):
        span = self.x_hi - self.x_lo
        return (np.asarray(xs, dtype=float) - self.x_lo) / span

    @classmethod
    def fit(cls, ts: TimeSeries) -> "Standardization":
        lo, hi = float(ts.xs.min()), float(ts.xs.max())
        if hi == lo:
            hi = lo + 1.0
        std = float(ts.ys.std())
        if std == 0.0:
            std = 1.0
        return cls(lo, hi, float(ts.ys.mean()), std)
