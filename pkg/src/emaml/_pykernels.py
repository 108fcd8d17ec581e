"""Pure-Python (numpy) versions of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
The compiled module is preferred at import time; this one is the fallback
and the reference the compiled version is tested against.
"""

import math

import numpy as np

GRAVITY = 9.8
TAU = 0.02


def mlp_forward_one(values, sizes, x, sigmoid_head):
    """Evaluate a tanh MLP stored flat (per layer: W row-major, then b) on one input."""
    h = np.asarray(x, dtype=np.float64)
    offset = 0
    n_layers = len(sizes) - 1
    for k in range(n_layers):
        fan_in, fan_out = int(sizes[k]), int(sizes[k + 1])
        w = values[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = values[offset:offset + fan_out]
        offset += fan_out
        h = w @ h + b
        if k < n_layers - 1:
            h = np.tanh(h)
    if sigmoid_head:
        h = 1.0 / (1.0 + np.exp(-h))
    return h


def cartpole_step(x, x_dot, theta, theta_dot, m_c, m_p, l, force_mag, action):
    """One semi-implicit Euler step; returns (x, x_dot, theta, theta_dot, theta_acc)."""
    force = force_mag if action == 1 else -force_mag
    costh = math.cos(theta)
    sinth = math.sin(theta)
    total_mass = m_c + m_p
    polemass_length = m_p * l
    temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass
    theta_acc = (GRAVITY * sinth - costh * temp) / (
        l * (4.0 / 3.0 - m_p * costh * costh / total_mass))
    x_acc = temp - polemass_length * theta_acc * costh / total_mass
    x_dot = x_dot + TAU * x_acc
    x = x + TAU * x_dot
    theta_dot = theta_dot + TAU * theta_acc
    theta = theta + TAU * theta_dot
    return x, x_dot, theta, theta_dot, theta_acc


def manifold_flows(levels, is_open, resistances, pumps):
    """Per-tank outflow into a shared manifold with zero net flow.

    Outflow of an open tank is ``min(cap, (level - h) / R)`` where the cap is
    ``min(pump, level)``; inflow is uncapped. ``h`` is the unique manifold
    level making the flows sum to zero (the flow sum is piecewise linear and
    non-increasing in ``h``, so the root is found segment by segment).
    """
    n = len(levels)
    flows = np.zeros(n)
    idx = [i for i in range(n) if is_open[i]]
    if len(idx) < 2:
        return flows, float("nan")
    caps = {i: min(pumps[i], levels[i]) for i in idx}
    if sum(caps.values()) <= 0.0:
        return flows, float("nan")
    order = sorted(idx, key=lambda i: levels[i] - caps[i] * resistances[i])
    breaks = [levels[i] - caps[i] * resistances[i] for i in order]
    h = float("nan")
    for k in range(1, len(order) + 1):
        num = 0.0
        for i in order[k:]:
            num += caps[i]
        den = 0.0
        for i in order[:k]:
            num += levels[i] / resistances[i]
            den += 1.0 / resistances[i]
        cand = num / den
        if k == len(order) or cand <= breaks[k]:
            h = cand
            break
    for i in idx:
        flows[i] = min(caps[i], (levels[i] - h) / resistances[i])
    return flows, h


def discounted_returns(rewards, terminal, gamma):
    """Backward recurrence R_t = r_t + gamma * R_{t+1}, reset after terminal[t]."""
    n = len(rewards)
    out = np.empty(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if terminal[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out
