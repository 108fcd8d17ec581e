"""Clipped-ratio PPO with a separate value network.

Policies are Bernoulli over each action bit: one sigmoid output for the
cart-pole (push right vs. left) and six for the fuel-tank valves.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .nn import (PROB_CLAMP, AdamState, DimensionError, NetworkSpec, ParameterVector,
                 adam_step, backward, forward_cache)


class NonFiniteRatioError(FloatingPointError):
    def __init__(self, index, value):
        super().__init__(f"importance ratio is not finite at sample {index}: {value!r}")
        self.index = index


@dataclass(frozen=True, eq=False)
class Memory:
    """Buffered experience. ``boundaries`` are the indices where a new episode starts."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs_old: np.ndarray
    boundaries: tuple = ()

    def __post_init__(self):
        n = len(self.rewards)
        states = np.asarray(self.states, dtype=np.float64).reshape(n, -1)
        actions = np.asarray(self.actions, dtype=np.int8).reshape(n, -1)
        rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        lp = np.asarray(self.log_probs_old, dtype=np.float64).reshape(-1)
        if not (states.shape[0] == actions.shape[0] == lp.shape[0] == n):
            raise ValueError("memory arrays must all have the same length")
        if not np.all(np.isfinite(lp)):
            raise ValueError("log_probs_old must be finite")
        b = tuple(int(i) for i in self.boundaries)
        if list(b) != sorted(set(b)) or any(i <= 0 or i >= n for i in b):
            raise ValueError(f"episode boundaries must be sorted, unique and inside (0, {n}): {b}")
        for name, arr in (("states", states), ("actions", actions), ("rewards", rewards),
                          ("log_probs_old", lp)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "boundaries", b)

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        """``terminal[t]`` is true when sample ``t`` is the last of its episode."""
        flags = np.zeros(len(self), dtype=np.uint8)
        for b in self.boundaries:
            flags[b - 1] = 1
        return flags

    def scaled_rewards(self, c: float) -> "Memory":
        return Memory(self.states, self.actions, self.rewards * c, self.log_probs_old, self.boundaries)

    def with_log_probs(self, log_probs) -> "Memory":
        return Memory(self.states, self.actions, self.rewards, log_probs, self.boundaries)


class MemoryBuilder:
    def __init__(self):
        self.clear()

    def clear(self):
        self._s, self._a, self._r, self._b = [], [], [], []
        self._pending_boundary = False

    def __len__(self):
        return len(self._r)

    def add(self, obs, bits, reward, done):
        if self._pending_boundary:
            self._b.append(len(self._r))
        self._s.append(obs)
        self._a.append(bits)
        self._r.append(reward)
        self._pending_boundary = bool(done)

    def build(self, theta: ParameterVector) -> Memory:
        """Freeze the buffer; log-probabilities are evaluated in one batch under ``theta``,
        the parameters that collected it, so the PPO ratio there is exactly 1."""
        states = np.array(self._s)
        actions = np.array(self._a)
        return Memory(states, actions, np.array(self._r), log_prob(theta, states, actions),
                      tuple(self._b))


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 0.002
    betas: tuple = (0.9, 0.999)
    epochs: int = 3
    t_update: int = 500
    gamma: float = 0.99
    eps_clip: float = 0.2
    hidden: tuple = (32, 32)
    value_coef: float = 0.5

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if not (0.0 < self.gamma <= 1.0):
            errors.append(f"gamma must be in (0, 1], got {self.gamma}")
        if not self.eps_clip > 0:
            errors.append(f"eps_clip must be > 0, got {self.eps_clip}")
        if int(self.epochs) < 1:
            errors.append(f"epochs must be >= 1, got {self.epochs}")
        if int(self.t_update) < 1:
            errors.append(f"t_update must be >= 1, got {self.t_update}")
        if self.lr < 0:
            errors.append(f"lr must be >= 0, got {self.lr}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            errors.append(f"betas must be two decay rates in [0, 1), got {self.betas}")
        return errors

    @classmethod
    def for_env(cls, kind: str, **overrides) -> "PpoConfig":
        base = {"cartpole": {}, "fueltank": {"t_update": 1000, "hidden": (64, 64)}}[kind]
        return cls(**{**base, **overrides})

    def action_spec(self, env) -> NetworkSpec:
        return NetworkSpec((env.n_obs, *self.hidden, env.n_action_bits), "sigmoid")

    def value_spec(self, env) -> NetworkSpec:
        return NetworkSpec((env.n_obs, *self.hidden, 1), "linear")


# -- distributions ------------------------------------------------------------

def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bit_probs(theta: ParameterVector, states) -> np.ndarray:
    """P(bit = 1) for every state row, clamped to [1e-7, 1 - 1e-7]."""
    out, _ = forward_cache(theta, states)
    return _clamp(out)


def action_distribution(theta: ParameterVector, state) -> np.ndarray:
    """Probability table for one state: row ``k`` is ``(P(bit_k=0), P(bit_k=1))``."""
    x = np.asarray(state.values if hasattr(state, "values") else state, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != theta.spec.n_inputs:
        raise DimensionError(f"policy {theta.spec.spec_id} needs a state of length "
                             f"{theta.spec.n_inputs}, got shape {x.shape}")
    p = _clamp(kernels.mlp_forward_one(theta.values, theta.spec.layer_sizes, x, True))
    return np.stack([_clamp(1.0 - p), p], axis=1)


def _log_prob_from_probs(p, actions):
    return np.sum(np.where(actions == 1, np.log(p), np.log(1.0 - p)), axis=1)


def log_prob(theta: ParameterVector, states, actions) -> np.ndarray:
    """Joint log-probability of each action row (sum over independent bits)."""
    actions = np.asarray(actions).reshape(len(states), -1)
    return _log_prob_from_probs(bit_probs(theta, states), actions)


def action_probability(theta: ParameterVector, states, actions) -> np.ndarray:
    return np.exp(log_prob(theta, states, actions))


def discounted_returns(rewards, boundaries, gamma: float) -> np.ndarray:
    """Per-episode discounted return ``R_t = r_t + gamma * R_{t+1}``; resets at boundaries."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.zeros(len(rewards), dtype=np.uint8)
    for b in boundaries:
        terminal[int(b) - 1] = 1
    return kernels.discounted_returns(rewards, terminal, float(gamma))


def memory_returns(memory: Memory, gamma: float) -> np.ndarray:
    return kernels.discounted_returns(memory.rewards, memory.terminal, float(gamma))


# -- loss -----------------------------------------------------------------------

def clipped_surrogate(ratio, adv, eps):
    """Per-sample ``min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)`` and its d/d(ratio)."""
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    obj = np.minimum(surr1, surr2)
    d_ratio = np.where(surr1 <= surr2, adv, 0.0)
    return obj, d_ratio


def _check_ratio(ratio):
    bad = np.flatnonzero(~np.isfinite(ratio))
    if bad.size:
        raise NonFiniteRatioError(int(bad[0]), float(ratio[bad[0]]))


def surrogate_gain_and_grad(theta: ParameterVector, states, actions, ref_log_probs,
                            advantages, eps: float):
    """Mean clipped importance-sampled gain on a batch and its gradient w.r.t. theta."""
    actions = np.asarray(actions).reshape(len(states), -1)
    raw, acts = forward_cache(theta, states)
    p = _clamp(raw)
    with np.errstate(over="ignore"):
        ratio = np.exp(_log_prob_from_probs(p, actions) - ref_log_probs)
    _check_ratio(ratio)
    obj, d_ratio = clipped_surrogate(ratio, advantages, eps)
    n = len(ratio)
    d_logp = d_ratio * ratio / n
    inside = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    d_p = np.where(actions == 1, 1.0 / p, -1.0 / (1.0 - p)) * inside * d_logp[:, None]
    return float(obj.mean()), backward(theta, acts, d_p, raw)


def ppo_loss_and_grad(theta: ParameterVector, theta_v: ParameterVector, memory: Memory,
                      returns, eps_clip: float, value_coef: float = 0.5, advantages=None):
    """Total PPO loss (to descend) and its gradients w.r.t. the policy and value nets.

    Advantages ``R - V`` enter the policy term as constants, so the value net
    is trained by the squared-error term alone. Passing ``advantages`` fixes
    them explicitly; the returned gradients are exact for that function.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if returns.shape[0] != len(memory):
        raise DimensionError(f"{returns.shape[0]} returns for a memory of {len(memory)}")
    v_out, v_acts = forward_cache(theta_v, memory.states)
    v = v_out[:, 0]
    adv = returns - v if advantages is None else np.asarray(advantages, dtype=np.float64)
    gain, g_pi = surrogate_gain_and_grad(theta, memory.states, memory.actions,
                                         memory.log_probs_old, adv, eps_clip)
    n = len(memory)
    mse = float(np.mean((v - returns) ** 2))
    g_v = backward(theta_v, v_acts, (value_coef * 2.0 / n * (v - returns))[:, None])
    return -gain + value_coef * mse, -g_pi, g_v


def ppo_loss(theta, theta_v, memory, returns, eps_clip, value_coef=0.5, advantages=None) -> float:
    return ppo_loss_and_grad(theta, theta_v, memory, returns, eps_clip, value_coef, advantages)[0]


# -- rollouts ---------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeLog:
    step: int
    episode: int
    cumulative_reward: float
    wall_ms: float = 0.0


def reward_log_csv(log, wall_clock: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "episode", "cumulative_reward", "wall_ms"])
    for e in log:
        w.writerow([e.step, e.episode, repr(float(e.cumulative_reward)),
                    f"{e.wall_ms:.3f}" if wall_clock else "0"])
    return buf.getvalue()


class StepError(RuntimeError):
    def __init__(self, step, cause):
        super().__init__(f"environment failed at step {step}: {cause}")
        self.step = step


class Runner:
    """Steps one environment under a stochastic policy, tracking episodes."""

    def __init__(self, env, rng: np.random.Generator, wall_clock: bool = False):
        self.env = env
        self.rng = rng
        self.state = env.reset(rng)
        self.steps = 0
        self.episode = 1
        self.episode_reward = 0.0
        self.total_reward = 0.0
        self.log: list[EpisodeLog] = []
        self._t0 = time.perf_counter() if wall_clock else None

    def run(self, theta: ParameterVector, n_steps: int, builder: MemoryBuilder | None = None):
        env = self.env
        sizes = theta.spec.layer_sizes
        vals = theta.values
        fwd = kernels.mlp_forward_one
        rng = self.rng
        for _ in range(n_steps):
            obs = env.observe(self.state)
            p = fwd(vals, sizes, obs, True)
            np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP, out=p)
            bits = (rng.random(p.shape[0]) < p).astype(np.int8)
            self.steps += 1
            try:
                res = env.step(self.state, bits)
            except Exception as exc:
                raise StepError(self.steps, exc) from exc
            if builder is not None:
                builder.add(obs, bits, res.reward, res.done)
            self.episode_reward += res.reward
            self.total_reward += res.reward
            if res.done:
                wall = (time.perf_counter() - self._t0) * 1000.0 if self._t0 is not None else 0.0
                self.log.append(EpisodeLog(self.steps, self.episode, self.episode_reward, wall))
                self.episode += 1
                self.episode_reward = 0.0
                self.state = env.reset(rng)
            else:
                self.state = res.next_state


def collect(env, theta: ParameterVector, n_steps: int, rng: np.random.Generator) -> Memory:
    """Run ``theta`` without learning and return the buffered experience."""
    builder = MemoryBuilder()
    Runner(env, rng).run(theta, n_steps, builder)
    return builder.build(theta)


@dataclass
class PpoResult:
    theta: ParameterVector
    theta_v: ParameterVector
    reward_log: list = field(default_factory=list)
    total_reward: float = 0.0
    steps: int = 0
    updates: int = 0


def ppo_update(theta, theta_v, memory: Memory, config: PpoConfig, adam_pi: AdamState, adam_v: AdamState):
    returns = memory_returns(memory, config.gamma)
    for _ in range(int(config.epochs)):
        _, g_pi, g_v = ppo_loss_and_grad(theta, theta_v, memory, returns, config.eps_clip, config.value_coef)
        theta, adam_pi = adam_step(adam_pi, theta, g_pi, "descent")
        theta_v, adam_v = adam_step(adam_v, theta_v, g_v, "descent")
    return theta, theta_v, adam_pi, adam_v


def ppo_train(env, theta: ParameterVector, theta_v: ParameterVector, config: PpoConfig,
              total_steps: int, rng: np.random.Generator, wall_clock: bool = False) -> PpoResult:
    """Collect ``t_update`` steps, run ``epochs`` Adam passes on the PPO loss, repeat."""
    if total_steps < config.t_update:
        raise ValueError(f"total_steps ({total_steps}) must be >= t_update ({config.t_update})")
    if theta.spec.n_inputs != env.n_obs or theta.spec.n_outputs != env.n_action_bits:
        raise DimensionError(f"policy {theta.spec.spec_id} does not fit the {env.kind} environment")
    adam_pi = AdamState.fresh(len(theta), config.lr, config.betas)
    adam_v = AdamState.fresh(len(theta_v), config.lr, config.betas)
    runner = Runner(env, rng, wall_clock)
    builder = MemoryBuilder()
    updates = 0
    done_steps = 0
    while done_steps < total_steps:
        chunk = min(config.t_update - len(builder), total_steps - done_steps)
        runner.run(theta, chunk, builder)
        done_steps += chunk
        if len(builder) == config.t_update:
            memory = builder.build(theta)
            builder.clear()
            theta, theta_v, adam_pi, adam_v = ppo_update(theta, theta_v, memory, config, adam_pi, adam_v)
            updates += 1
    return PpoResult(theta, theta_v, runner.log, runner.total_reward, runner.steps, updates)


def episode_mean(log, first: bool, n: int = 10) -> float:
    rows = log[:n] if first else log[-n:]
    return float(np.mean([e.cumulative_reward for e in rows])) if rows else math.nan
