"""Performance-weighted meta-updates over a complement of fault policies.

The complement holds policies trained under earlier faults. After a new
fault, each is scored on the post-fault memory by the probability-weighted
discounted return of the buffered actions, the best ``r`` are kept, and
their gain gradients on the memory are aggregated into an update of the
current controller. The MAML baseline samples processes from a family
instead. Complement membership is curated by total Jensen-Shannon
divergence between policies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .nn import DimensionError, ParameterVector, backward, forward_cache
from .ppo import (Memory, MemoryBuilder, Runner, _clamp, bit_probs, log_prob, memory_returns,
                  surrogate_gain_and_grad)

log = logging.getLogger(__name__)

VARIANTS = ("maml", "fomaml", "reptile")
BASELINES = ("none", "mean", "standardized", "value")
SCORE_RETURNS = ("raw", "centered", "standardized")
LN2 = math.log(2.0)


@dataclass(frozen=True)
class ComplementEntry:
    theta: ParameterVector
    label: str
    trained_steps: int = 0
    total_divergence: float | None = None


@dataclass(frozen=True)
class PolicyComplement:
    entries: tuple = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        specs = {e.theta.spec for e in entries}
        if len(specs) > 1:
            raise DimensionError(f"complement mixes network specs: {sorted(s.spec_id for s in specs)}")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def thetas(self) -> list[ParameterVector]:
        return [e.theta for e in self.entries]


@dataclass(frozen=True)
class MetaConfig:
    alpha_in: float = 0.001
    alpha_out: float = 0.002
    k_in: int = 0
    k_out: int = 5
    rank: int = 4
    size: int = 4
    variant: str = "fomaml"
    gamma: float = 0.99
    eps_clip: float = 0.2
    score_returns: str = "standardized"
    baseline: str = "standardized"
    memory_size: int = 2000
    # MAML baseline only
    tasks: int = 4
    task_steps: int = 2000
    hvp_step: float = 1e-4

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if self.rank > self.size:
            errors.append(f"rank ({self.rank}) must not exceed complement size ({self.size})")
        if self.rank < 0 or self.size < 0:
            errors.append("rank and size must be non-negative")
        if self.k_in < 0 or self.k_out < 0:
            errors.append("k_in and k_out must be non-negative")
        if self.alpha_in < 0 or self.alpha_out < 0:
            errors.append("learning rates must be non-negative")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.score_returns not in SCORE_RETURNS:
            errors.append(f"score_returns must be one of {SCORE_RETURNS}, got {self.score_returns!r}")
        if self.baseline not in BASELINES:
            errors.append(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if not (0.0 < self.gamma <= 1.0):
            errors.append(f"gamma must be in (0, 1], got {self.gamma}")
        if self.memory_size < 1:
            errors.append("memory_size must be >= 1")
        return errors

    @classmethod
    def for_env(cls, kind: str, **overrides) -> "MetaConfig":
        base = {
            "cartpole": {},
            "fueltank": {"alpha_out": 0.001, "k_in": 3, "k_out": 3, "memory_size": 4000,
                         "task_steps": 4000},
        }[kind]
        return cls(**{**base, **overrides})


def _check_spec(theta: ParameterVector, memory: Memory):
    if memory.states.shape[1] != theta.spec.n_inputs or memory.actions.shape[1] != theta.spec.n_outputs:
        raise DimensionError(
            f"policy {theta.spec.spec_id} does not match memory states of width "
            f"{memory.states.shape[1]} / actions of width {memory.actions.shape[1]}")


# -- performance weighting -------------------------------------------------------

def score_weights(memory: Memory, gamma: float, returns: str = "raw") -> np.ndarray:
    """Discounted returns of the memory, optionally centered or standardized over the buffer."""
    R = memory_returns(memory, gamma)
    if returns == "raw":
        return R
    if returns == "centered":
        return R - R.mean()
    if returns == "standardized":
        return (R - R.mean()) / (R.std() + 1e-5)
    raise ValueError(f"returns must be one of {SCORE_RETURNS}, got {returns!r}")


def score_from_probabilities(probs, weights) -> float:
    """Sum over samples of the probability of the taken action times its return weight."""
    probs = np.asarray(probs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.shape != weights.shape:
        raise DimensionError(f"{probs.shape[0]} probabilities for {weights.shape[0]} returns")
    return float(np.dot(probs, weights))


def expected_return_score(theta: ParameterVector, memory: Memory, gamma: float,
                          returns: str = "raw") -> float:
    """Sum over the memory of P_theta(taken action | state) times its discounted return.

    With ``returns="raw"`` the score is linear in the rewards. Non-negative
    rewards then favour whichever policy most resembles the one that
    collected the memory; ``"standardized"`` removes that bias by weighting
    actions by how much better than average their return was.
    """
    if len(memory) == 0:
        raise ValueError("memory is empty")
    _check_spec(theta, memory)
    probs = np.exp(log_prob(theta, memory.states, memory.actions))
    return score_from_probabilities(probs, score_weights(memory, gamma, returns))


def expected_return_score_grad(theta: ParameterVector, memory: Memory, gamma: float,
                               returns: str = "raw"):
    """Score and its gradient w.r.t. theta (d pi = pi * d log pi)."""
    _check_spec(theta, memory)
    raw, acts = forward_cache(theta, memory.states)
    p = _clamp(raw)
    a = memory.actions
    pi = np.exp(np.sum(np.where(a == 1, np.log(p), np.log(1.0 - p)), axis=1))
    R = score_weights(memory, gamma, returns)
    inside = (raw > 1e-7) & (raw < 1.0 - 1e-7)
    d_p = np.where(a == 1, 1.0 / p, -1.0 / (1.0 - p)) * inside * (pi * R)[:, None]
    return float(np.dot(pi, R)), backward(theta, acts, d_p, raw)


def score_complement(complement: PolicyComplement, memory: Memory, gamma: float,
                     returns: str = "raw") -> list[float]:
    return [expected_return_score(e.theta, memory, gamma, returns) for e in complement]


def rank_and_select(complement: PolicyComplement, memory: Memory, r: int, gamma: float,
                    scores: Sequence[float] | None = None, returns: str = "raw") -> PolicyComplement:
    """Top ``r`` entries by score, best first; equal scores keep complement order."""
    if r > len(complement):
        raise ValueError(f"cannot select {r} policies from a complement of {len(complement)}")
    if r < 0:
        raise ValueError("r must be non-negative")
    if scores is None:
        scores = score_complement(complement, memory, gamma, returns)
    order = sorted(range(len(complement)), key=lambda i: -scores[i])
    return PolicyComplement(tuple(complement.entries[i] for i in order[:r]))


# -- update rules ------------------------------------------------------------------

@dataclass
class InnerResult:
    """Outcome of adapting one policy.

    ``jacobian`` is ``d theta_final / d theta_out``, given either as a matrix or
    as a callable returning the vector-Jacobian product ``v @ J``.
    """

    theta_final: np.ndarray
    test_gradient: np.ndarray
    jacobian: np.ndarray | Callable | None = None


def delta_theta(variant: str, theta_out, inner_results: Sequence[InnerResult]) -> np.ndarray:
    base = np.asarray(getattr(theta_out, "values", theta_out), dtype=np.float64)
    delta = np.zeros_like(base)
    for res in inner_results:
        if variant == "fomaml":
            delta += res.test_gradient
        elif variant == "reptile":
            delta += np.asarray(res.theta_final) - base
        elif variant == "maml":
            J = res.jacobian
            if J is None:
                raise ValueError("variant 'maml' needs the Jacobian of each inner result")
            g = np.asarray(res.test_gradient, dtype=np.float64)
            delta += J(g) if callable(J) else g @ np.asarray(J)
        else:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return delta


# -- gains on a memory -----------------------------------------------------------------

@dataclass
class Gain:
    """Clipped importance-sampled gain on a fixed batch (ascended, not descended)."""

    memory: Memory
    ref_log_probs: np.ndarray
    advantages: np.ndarray
    eps: float

    def value_and_grad(self, theta: ParameterVector):
        return surrogate_gain_and_grad(theta, self.memory.states, self.memory.actions,
                                       self.ref_log_probs, self.advantages, self.eps)

    def grad(self, theta: ParameterVector) -> np.ndarray:
        return self.value_and_grad(theta)[1]


def advantages(memory: Memory, config: MetaConfig, value_params: ParameterVector | None = None):
    R = memory_returns(memory, config.gamma)
    if config.baseline == "none":
        return R
    if config.baseline == "mean":
        return R - R.mean()
    if config.baseline == "standardized":
        return (R - R.mean()) / (R.std() + 1e-5)
    if value_params is None:
        raise ValueError("baseline 'value' needs value-network parameters")
    return R - forward_cache(value_params, memory.states)[0][:, 0]


def hessian_vector_product(gain: Gain, theta: ParameterVector, v: np.ndarray, h: float) -> np.ndarray:
    """Central difference of the analytic gradient along ``v``."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    u = v / norm
    up = gain.grad(theta.replace(theta.values + h * u))
    dn = gain.grad(theta.replace(theta.values - h * u))
    return (up - dn) / (2.0 * h) * norm


def _inner_vjp(steps: list[tuple[Gain, ParameterVector]], alpha_in: float, h: float):
    """v @ d theta_K / d theta_1 for plain ascent steps theta_{k+1} = theta_k + alpha * grad G_k."""
    def vjp(v):
        out = np.asarray(v, dtype=np.float64).copy()
        for gain, theta_k in reversed(steps):
            out = out + alpha_in * hessian_vector_product(gain, theta_k, out, h)
        return out
    return vjp


def _adapt(theta_start: ParameterVector, train_gains: Callable[[int, ParameterVector], Gain],
           test_gain: Callable[[ParameterVector], Gain], config: MetaConfig) -> InnerResult:
    theta = theta_start
    steps = []
    for k in range(config.k_in):
        gain = train_gains(k, theta)
        steps.append((gain, theta))
        theta = theta.replace(theta.values + config.alpha_in * gain.grad(theta))
    g = test_gain(theta).grad(theta)
    jac = None
    if config.variant == "maml":
        jac = _inner_vjp(steps, config.alpha_in, config.hvp_step) if steps else (lambda v: np.asarray(v))
    return InnerResult(theta.values, g, jac)


# -- E-MAML -----------------------------------------------------------------------------

@dataclass
class MetaTrace:
    scores: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    status: str = "ok"
    deltas: list = field(default_factory=list)


def emaml_meta_update(theta_k: ParameterVector, memory: Memory, complement: PolicyComplement,
                      config: MetaConfig, value_params: ParameterVector | None = None,
                      trace: MetaTrace | None = None) -> ParameterVector:
    """Re-initialize ``theta_k`` from the top-ranked complement policies evaluated on ``memory``.

    No environment interaction happens here; every gain is computed on the
    buffered post-fault experience.
    """
    trace = trace if trace is not None else MetaTrace()
    if len(complement) == 0 or config.rank == 0:
        trace.status = "empty-complement"
        log.warning("meta-update skipped: no complement policies selected")
        return theta_k
    _check_spec(theta_k, memory)
    if theta_k.spec != complement.entries[0].theta.spec:
        raise DimensionError("controller and complement use different network specs")
    r = min(config.rank, len(complement))
    scores = score_complement(complement, memory, config.gamma, config.score_returns)
    selected = rank_and_select(complement, memory, r, config.gamma, scores)
    trace.scores = list(zip(complement.labels, scores))
    trace.selected = selected.labels

    adv = advantages(memory, config, value_params)
    own_lp = {e.label: log_prob(e.theta, memory.states, memory.actions) for e in selected}

    def gain_for(label):
        return Gain(memory, own_lp[label], adv, config.eps_clip)

    theta = theta_k
    for _ in range(config.k_out):
        results = []
        for entry in selected:
            g = gain_for(entry.label)
            results.append(_adapt(entry.theta, lambda k, th, g=g: g, lambda th, g=g: g, config))
        delta = delta_theta(config.variant, theta, results)
        trace.deltas.append(float(np.linalg.norm(delta)))
        theta = theta.replace(theta.values + config.alpha_out * delta)
    return theta


# -- MAML baseline --------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessFamily:
    """Independent uniform relative perturbations of selected fields of a base process."""

    base: object
    spread: dict = field(default_factory=dict)

    def sample(self, rng: np.random.Generator):
        changes = {}
        for name, s in sorted(self.spread.items()):
            v = getattr(self.base, name)
            if isinstance(v, tuple):
                factors = rng.uniform(1.0 - s, 1.0 + s, size=len(v))
                changes[name] = tuple(float(a * f) for a, f in zip(v, factors))
            else:
                changes[name] = float(v * rng.uniform(1.0 - s, 1.0 + s))
        return replace(self.base, **changes)


def maml_train(theta: ParameterVector, family: ProcessFamily, config: MetaConfig, env_factory: Callable,
               rng: np.random.Generator) -> ParameterVector:
    """Meta-train an initialization over processes sampled from ``family``.

    ``env_factory(params)`` builds an environment for a sampled process. Inner
    and test gains are computed on fresh trajectories from that process.
    """

    def rollout_gain(env, th):
        builder = MemoryBuilder()
        Runner(env, rng).run(th, config.task_steps, builder)
        mem = builder.build(th)
        cfg = replace(config, baseline="standardized") if config.baseline == "value" else config
        return Gain(mem, mem.log_probs_old, advantages(mem, cfg), config.eps_clip)

    theta_out = theta
    for _ in range(config.k_out):
        results = []
        for _task in range(config.tasks):
            env = env_factory(family.sample(rng))
            results.append(_adapt(theta_out, lambda k, th, env=env: rollout_gain(env, th),
                                  lambda th, env=env: rollout_gain(env, th), config))
        theta_out = theta_out.replace(theta_out.values
                                      + config.alpha_out * delta_theta(config.variant, theta_out, results))
    return theta_out


# -- divergence-based curation --------------------------------------------------------

def jsd(p, q) -> np.ndarray:
    """Jensen-Shannon divergence (natural log) between distributions along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log(p / m), 0.0).sum(axis=-1)
        kl_q = np.where(q > 0, q * np.log(q / m), 0.0).sum(axis=-1)
    return np.clip(0.5 * (kl_p + kl_q), 0.0, LN2)


def _bit_tables(p: np.ndarray) -> np.ndarray:
    return np.stack([1.0 - p, p], axis=-1)


def js_divergence(theta_a: ParameterVector, theta_b: ParameterVector, memory: Memory) -> float:
    """Mean over memory states of the per-state JSD, summed over independent action bits."""
    if len(memory) == 0:
        raise ValueError("memory is empty")
    _check_spec(theta_a, memory)
    _check_spec(theta_b, memory)
    pa = _bit_tables(bit_probs(theta_a, memory.states))
    pb = _bit_tables(bit_probs(theta_b, memory.states))
    return float(jsd(pa, pb).sum(axis=1).mean())


def divergence_matrix(complement: PolicyComplement, memory: Memory) -> np.ndarray:
    tables = [_bit_tables(bit_probs(e.theta, memory.states)) for e in complement]
    n = len(tables)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = float(jsd(tables[i], tables[j]).sum(axis=1).mean())
    return D


def curate_complement(complement: PolicyComplement, s: int, memory: Memory) -> PolicyComplement:
    """Keep the ``s`` policies with the largest total divergence from the rest, largest first."""
    if s > len(complement):
        raise ValueError(f"cannot keep {s} policies out of {len(complement)}")
    if s < 0:
        raise ValueError("s must be non-negative")
    D = divergence_matrix(complement, memory)
    totals = D.sum(axis=1)
    order = sorted(range(len(complement)), key=lambda i: -totals[i])
    kept = [replace(complement.entries[i], total_divergence=float(totals[i])) for i in order[:s]]
    return PolicyComplement(tuple(kept))
