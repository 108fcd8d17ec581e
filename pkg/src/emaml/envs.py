"""Cart-pole and 6-tank fuel-transfer simulators.

Both are pure step functions over explicit state. Faults are edits to the
process parameters made with :func:`inject_fault`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Any, Mapping

import numpy as np

from . import kernels

THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4
CARTPOLE_MAX_STEPS = 500
N_TANKS = 6
ENGINE_FEED_TANKS = (2, 3)
OUTBOARD_TANKS = (0, 5)


class InvalidParamsError(ValueError):
    pass


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class CartPoleParams:
    m_c: float = 1.0
    m_p: float = 0.1
    l: float = 0.5
    F: float = 10.0

    def __post_init__(self):
        for name in ("m_c", "m_p", "l", "F"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidParamsError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.m_c <= 0 or self.m_p <= 0 or self.l <= 0:
            raise InvalidParamsError(f"masses and length must be positive: {self}")
        if self.F == 0:
            raise InvalidParamsError("force magnitude must be non-zero")

    def as_tuple(self):
        return (self.m_c, self.m_p, self.l, self.F)


def _vec(v, n, name):
    arr = tuple(float(x) for x in v)
    if len(arr) != n:
        raise InvalidParamsError(f"{name} needs {n} entries, got {len(arr)}")
    if not all(math.isfinite(x) for x in arr):
        raise InvalidParamsError(f"{name} has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class FuelTankParams:
    resistances: tuple = (100.0,) * 6
    pump_rates: tuple = (0.1,) * 6
    engine_rates: tuple = (0.1, 0.1)
    tank_positions: tuple = (-3.0, -2.0, -1.0, 1.0, 2.0, 3.0)
    leak_rates: tuple = (0.0,) * 6
    nominal_fill: float = 50.0
    reward_weights: tuple = (1.0, 0.5, 1.0)
    max_steps: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "resistances", _vec(self.resistances, N_TANKS, "resistances"))
        object.__setattr__(self, "pump_rates", _vec(self.pump_rates, N_TANKS, "pump_rates"))
        object.__setattr__(self, "engine_rates", _vec(self.engine_rates, 2, "engine_rates"))
        object.__setattr__(self, "tank_positions", _vec(self.tank_positions, N_TANKS, "tank_positions"))
        object.__setattr__(self, "leak_rates", _vec(self.leak_rates, N_TANKS, "leak_rates"))
        object.__setattr__(self, "reward_weights", _vec(self.reward_weights, 3, "reward_weights"))
        if any(r <= 0 for r in self.resistances):
            raise InvalidParamsError(f"resistances must be positive: {self.resistances}")
        for name in ("pump_rates", "engine_rates", "leak_rates"):
            if any(r < 0 for r in getattr(self, name)):
                raise InvalidParamsError(f"{name} must be non-negative: {getattr(self, name)}")
        if self.nominal_fill < 0:
            raise InvalidParamsError("nominal_fill must be non-negative")


@dataclass(frozen=True)
class EnvState:
    values: tuple
    t: int = 0

    def as_array(self):
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    truncated: bool = False
    engine_draw: float = 0.0
    leak_draw: float = 0.0


def _require_finite(state: EnvState):
    if not all(math.isfinite(v) for v in state.values):
        raise InvalidStateError(f"state is not finite: {state.values}")


def _cartpole_failed(x, theta):
    return abs(theta) > THETA_LIMIT or abs(x) > X_LIMIT


def cartpole_step(params: CartPoleParams, state: EnvState, action) -> StepResult:
    """Advance one 0.02 s step; ``action`` 1 pushes right (+F), 0 pushes left.

    Reward is 1 for every step that does not end in failure and 0 for the
    failing step; reaching the step cap ends the episode without failure.
    """
    _require_finite(state)
    a = int(action[0]) if np.ndim(action) else int(action)
    x, x_dot, th, th_dot = state.values
    already = _cartpole_failed(x, th)
    x, x_dot, th, th_dot, _ = kernels.cartpole_step(
        x, x_dot, th, th_dot, params.m_c, params.m_p, params.l, params.F, a)
    t = state.t + 1
    failed = already or _cartpole_failed(x, th)
    truncated = not failed and t >= CARTPOLE_MAX_STEPS
    return StepResult(EnvState((x, x_dot, th, th_dot), t), 0.0 if failed else 1.0,
                      failed or truncated, truncated)


def cartpole_theta_acc(params: CartPoleParams, state: EnvState, action) -> float:
    x, x_dot, th, th_dot = state.values
    return kernels.cartpole_step(x, x_dot, th, th_dot, params.m_c, params.m_p, params.l,
                                 params.F, int(action))[4]


def fueltank_step(params: FuelTankParams, state: EnvState, action) -> StepResult:
    """Open valves exchange fuel through a shared manifold, then engines and leaks draw.

    Reward: ``-w_b*|sum(pos*level)| + w_e*outboard_fraction - w_f*leaked``.
    """
    bits = np.asarray(action).reshape(-1)
    if bits.shape[0] != N_TANKS:
        raise ValueError(f"fuel-tank action needs {N_TANKS} valve bits, got {bits.shape[0]}")
    _require_finite(state)
    levels = np.array(state.values, dtype=np.float64)
    if np.any(levels < 0):
        raise InvalidStateError(f"negative fuel level in {state.values}")
    flows, _ = kernels.manifold_flows(levels, bits.astype(bool), params.resistances, params.pump_rates)
    levels = levels - flows
    engine_draw = 0.0
    for tank, rate in zip(ENGINE_FEED_TANKS, params.engine_rates):
        d = min(rate, levels[tank])
        levels[tank] -= d
        engine_draw += d
    leak = np.minimum(params.leak_rates, levels)
    levels -= leak
    np.maximum(levels, 0.0, out=levels)
    leaked = float(leak.sum())

    w_b, w_e, w_f = params.reward_weights
    total = levels.sum()
    balance = abs(float(np.dot(params.tank_positions, levels)))
    outboard = float(levels[list(OUTBOARD_TANKS)].sum() / total) if total > 0 else 0.0
    reward = -w_b * balance + w_e * outboard - w_f * leaked

    t = state.t + 1
    empty = total <= 0.0
    truncated = not empty and t >= params.max_steps
    return StepResult(EnvState(tuple(levels.tolist()), t), reward, empty or truncated, truncated,
                      engine_draw, leaked)


def reset(env_kind: str, params, rng: np.random.Generator | int) -> EnvState:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if env_kind == "cartpole":
        return EnvState(tuple(rng.uniform(-0.05, 0.05, size=4).tolist()), 0)
    if env_kind == "fueltank":
        return EnvState((float(params.nominal_fill),) * N_TANKS, 0)
    raise ValueError(f"unknown environment kind {env_kind!r}")


# -- faults -----------------------------------------------------------------

def _apply_op(name, value, op):
    is_vec = isinstance(value, tuple)
    if op == "negate":
        op = {"negate": True}
    elif op == "disable":
        op = {"disable": True}
    if not isinstance(op, Mapping):
        raise InvalidParamsError(f"fault edit for {name!r} must be a mapping or 'negate'/'disable', got {op!r}")
    unknown = set(op) - {"set", "scale", "negate", "disable"}
    if unknown:
        raise InvalidParamsError(f"unknown fault operation(s) {sorted(unknown)} for {name!r}")
    v = np.array(value, dtype=np.float64)
    if "set" in op:
        v = np.broadcast_to(np.asarray(op["set"], dtype=np.float64), v.shape).copy()
    if "scale" in op:
        v = v * np.asarray(op["scale"], dtype=np.float64)
    if op.get("negate"):
        v = -v
    dis = op.get("disable")
    if dis is True:
        v = np.zeros_like(v)
    elif dis not in (None, False):
        if not is_vec:
            raise InvalidParamsError(f"{name!r} is scalar; use 'disable' without indices")
        for i in np.atleast_1d(dis):
            v[int(i)] = 0.0
    return tuple(v.tolist()) if is_vec else float(v)


def inject_fault(params, fault_spec: Mapping[str, Any] | None):
    """Return a new params object with the fault's per-field edits applied.

    ``fault_spec`` maps field names to ``{set: v}``, ``{scale: k}``,
    ``"negate"``, ``"disable"`` or ``{disable: [indices]}``; several keys in
    one mapping apply in the order set, scale, negate, disable.
    """
    if not fault_spec:
        return params
    names = {f.name for f in fields(params)}
    changes = {}
    for name, op in fault_spec.items():
        if name not in names:
            raise InvalidParamsError(f"{type(params).__name__} has no field {name!r}")
        changes[name] = _apply_op(name, getattr(params, name), op)
    return replace(params, **changes)


# -- environment objects used by the learners ---------------------------------

class CartPoleEnv:
    kind = "cartpole"
    n_obs = 4
    n_action_bits = 1

    def __init__(self, params: CartPoleParams | None = None):
        self.params = params or CartPoleParams()

    def reset(self, rng) -> EnvState:
        return reset(self.kind, self.params, rng)

    def observe(self, state: EnvState) -> np.ndarray:
        return np.array(state.values, dtype=np.float64)

    def step(self, state: EnvState, action) -> StepResult:
        return cartpole_step(self.params, state, action)


class FuelTankEnv:
    kind = "fueltank"
    n_obs = N_TANKS
    n_action_bits = N_TANKS

    def __init__(self, params: FuelTankParams | None = None):
        self.params = params or FuelTankParams()

    def reset(self, rng) -> EnvState:
        return reset(self.kind, self.params, rng)

    def observe(self, state: EnvState) -> np.ndarray:
        # levels relative to the nominal fill keep network inputs O(1)
        scale = self.params.nominal_fill or 1.0
        return np.array(state.values, dtype=np.float64) / scale

    def step(self, state: EnvState, action) -> StepResult:
        return fueltank_step(self.params, state, action)


ENV_CLASSES = {"cartpole": CartPoleEnv, "fueltank": FuelTankEnv}
PARAM_CLASSES = {"cartpole": CartPoleParams, "fueltank": FuelTankParams}


def make_env(kind: str, params=None):
    try:
        cls = ENV_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown environment kind {kind!r}; expected one of {sorted(ENV_CLASSES)}") from None
    return cls(params)


def params_from_dict(kind: str, data: Mapping[str, Any] | None):
    cls = PARAM_CLASSES[kind]
    try:
        return cls(**(data or {}))
    except TypeError as exc:
        raise InvalidParamsError(f"bad {kind} parameters: {exc}") from None


def params_to_dict(params) -> dict:
    out = {}
    for f in fields(params):
        v = getattr(params, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
