"""Generic MCMC synthesis over grammar-generated programs.

One chain = repeated sever/resimulate/accept transitions: pick a parse-tree
node uniformly (optionally restricted to structure or parameter nodes),
replace its subtree with a fresh prior draw from the severed nonterminal,
and accept with probability min{1, (|A|/|A'|) * (L'/L)}.  The node-count
factor is computed over the same restricted address set the move drew from,
which keeps each restricted operator reversible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grammar import Grammar, prior_logdensity, sample_scored
from .sexpr import Address, Expr, addresses, fill, sever, subexpr

NEG_INF = float("-inf")

MOVE_ALL = "all"
MOVE_STRUCTURE = "structure"
MOVE_PARAMS = "params"


class LikelihoodBoundError(RuntimeError):
    """A likelihood evaluation exceeded the model's declared upper bound."""


class InitializationError(RuntimeError):
    """No prior draw with nonzero likelihood within the retry budget."""


class LikelihoodModel:
    """Interface: subclasses provide loglik() and the bound log_cmax."""

    log_cmax: float = math.inf

    def loglik(self, expr: Expr, data) -> float:  # pragma: no cover - interface
        raise NotImplementedError


def checked_loglik(model: LikelihoodModel, expr: Expr, data) -> float:
    ll = model.loglik(expr, data)
    if ll > model.log_cmax + 1e-9:
        raise LikelihoodBoundError(
            f"loglik {ll} exceeds declared bound {model.log_cmax} for {expr}")
    return ll


def filtered_addresses(g: Grammar, e: Expr, move_filter: str) -> list:
    """Addresses eligible under the move filter, in preorder."""
    addrs = addresses(e)
    if move_filter == MOVE_ALL:
        return addrs
    if move_filter == MOVE_STRUCTURE:
        allowed = g.structure_tags
    elif move_filter == MOVE_PARAMS:
        allowed = g.parameter_tags
    else:
        raise ValueError(f"unknown move filter {move_filter!r}")
    return [a for a in addrs if subexpr(e, a).tag in allowed]


def initialize(g: Grammar, model: LikelihoodModel, data, rng,
               max_retries: int = 1_000_000):
    """Prior draws until one has nonzero likelihood.

    Returns (expr, loglik, logprior).  The retry count is geometric with
    mean c_max / c, so any data a sampled program can explain at all is
    found quickly.
    """
    for _ in range(max_retries):
        expr, logprior = sample_scored(g, g.start, rng)
        ll = checked_loglik(model, expr, data)
        if ll > NEG_INF:
            return expr, ll, logprior
    raise InitializationError(
        f"no prior draw had nonzero likelihood in {max_retries} attempts")


@dataclass
class Proposal:
    expr: Expr
    address: Address
    loglik: float
    logprior: float
    log_accept_ratio: float


def propose(g: Grammar, model: LikelihoodModel, data, e: Expr, e_loglik: float,
            rng, move_filter: str = MOVE_ALL) -> Optional[Proposal]:
    """One sever/resimulate proposal; None when no node is eligible."""
    eligible = filtered_addresses(g, e, move_filter)
    if not eligible:
        return None
    a = eligible[int(rng.integers(len(eligible)))]
    nt, hole = sever(e, a, g.tag_owner)
    sub = sample_scored(g, nt, rng)[0]
    proposal = fill(hole, sub)
    new_loglik = checked_loglik(model, proposal, data)
    if new_loglik == NEG_INF:
        ratio = NEG_INF
    else:
        eligible_new = filtered_addresses(g, proposal, move_filter)
        ratio = (math.log(len(eligible)) - math.log(len(eligible_new))
                 + new_loglik - e_loglik)
    return Proposal(expr=proposal, address=a, loglik=new_loglik,
                    logprior=prior_logdensity(g, proposal),
                    log_accept_ratio=ratio)


@dataclass
class Chain:
    current: Expr
    loglik: float
    logprior: float
    rng: np.random.Generator
    move_filter: str = MOVE_ALL
    steps: int = 0
    accepts: int = 0

    @property
    def log_joint(self) -> float:
        return self.loglik + self.logprior

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.steps if self.steps else 0.0


def transition(chain: Chain, g: Grammar, model: LikelihoodModel, data) -> Chain:
    """One MH step; on rejection the state is unchanged."""
    prop = propose(g, model, data, chain.current, chain.loglik, chain.rng,
                   chain.move_filter)
    chain.steps += 1
    if prop is None:
        return chain
    u = chain.rng.random()
    if math.log(u) < prop.log_accept_ratio:
        chain.current = prop.expr
        chain.loglik = prop.loglik
        chain.logprior = prop.logprior
        chain.accepts += 1
    return chain


@dataclass(frozen=True)
class MoveSchedule:
    """uniform: every step may touch any node.  alternating: blocks of
    structure-only steps followed by parameter-only steps."""

    kind: str = "uniform"
    structure_steps: int = 100
    param_steps: int = 100

    def filter_at(self, step: int) -> str:
        if self.kind == "uniform":
            return MOVE_ALL
        period = self.structure_steps + self.param_steps
        return (MOVE_STRUCTURE if step % period < self.structure_steps
                else MOVE_PARAMS)

    def spec(self) -> str:
        if self.kind == "uniform":
            return "uniform"
        return f"alternating:{self.structure_steps}:{self.param_steps}"

    @classmethod
    def parse(cls, text: str) -> "MoveSchedule":
        if text == "uniform":
            return cls("uniform")
        parts = text.split(":")
        if parts[0] != "alternating" or len(parts) > 3:
            raise ValueError(f"bad schedule {text!r}")
        nums = [int(p) for p in parts[1:]] or [100]
        if len(nums) == 1:
            nums = nums * 2
        if min(nums) < 1:
            raise ValueError("schedule step counts must be >= 1")
        return cls("alternating", nums[0], nums[1])


@dataclass(frozen=True)
class SynthesisConfig:
    chains: int = 60
    steps: int = 2000
    seed: int = 0
    schedule: MoveSchedule = field(default_factory=MoveSchedule)

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class EnsembleMember:
    expr: Expr
    logprior: float
    loglik: float


@dataclass
class Ensemble:
    members: list
    meta: dict

    def __len__(self) -> int:
        return len(self.members)

    def programs(self) -> list:
        return [m.expr for m in self.members]


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Independent, reproducible per-chain stream."""
    return np.random.default_rng(np.random.SeedSequence((seed, chain_index)))


def run_chains(config: SynthesisConfig, make_chain: Callable,
               step_fn: Callable) -> list:
    """Shared chain loop: make_chain(rng) -> Chain, step_fn(chain, step)."""
    chains = []
    for i in range(config.chains):
        chain = make_chain(chain_rng(config.seed, i))
        for step in range(config.steps):
            step_fn(chain, step)
        chains.append(chain)
    return chains


def synthesize(g: Grammar, model: LikelihoodModel, data,
               config: SynthesisConfig) -> Ensemble:
    """Run independent chains and return their final programs.

    Bitwise deterministic for a fixed config.
    """

    def make_chain(rng):
        expr, ll, lp = initialize(g, model, data, rng)
        return Chain(current=expr, loglik=ll, logprior=lp, rng=rng)

    def step_fn(chain, step):
        chain.move_filter = config.schedule.filter_at(step)
        transition(chain, g, model, data)

    chains = run_chains(config, make_chain, step_fn)
    members = [EnsembleMember(c.current, c.logprior, c.loglik) for c in chains]
    meta = {
        "seed": config.seed,
        "chains": config.chains,
        "steps": config.steps,
        "schedule": config.schedule.spec(),
        "acceptance_rate": (sum(c.accepts for c in chains)
                            / max(1, sum(c.steps for c in chains))),
    }
    return Ensemble(members, meta)
