# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Signatures and semantics mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp, sin, cos, NAN

cnp.import_array()

cdef double GRAVITY = 9.8
cdef double TAU = 0.02


def mlp_forward_one(const double[::1] values, sizes, x, bint sigmoid_head):
    cdef Py_ssize_t n_layers = len(sizes) - 1
    cdef Py_ssize_t widest = max(sizes)
    cdef double[::1] a = np.zeros(widest)
    cdef double[::1] b = np.zeros(widest)
    cdef const double[::1] xin = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] cur, nxt, tmp
    cdef Py_ssize_t k, i, j, fan_in, fan_out, offset = 0
    cdef double acc
    for i in range(xin.shape[0]):
        a[i] = xin[i]
    cur = a
    nxt = b
    for k in range(n_layers):
        fan_in = sizes[k]
        fan_out = sizes[k + 1]
        for i in range(fan_out):
            acc = values[offset + fan_in * fan_out + i]
            for j in range(fan_in):
                acc += values[offset + i * fan_in + j] * cur[j]
            if k < n_layers - 1:
                acc = tanh(acc)
            elif sigmoid_head:
                acc = 1.0 / (1.0 + exp(-acc))
            nxt[i] = acc
        offset += fan_in * fan_out + fan_out
        tmp = cur
        cur = nxt
        nxt = tmp
    return np.asarray(cur[:sizes[n_layers]]).copy()


def cartpole_step(double x, double x_dot, double theta, double theta_dot,
                  double m_c, double m_p, double l, double force_mag, int action):
    cdef double force = force_mag if action == 1 else -force_mag
    cdef double costh = cos(theta)
    cdef double sinth = sin(theta)
    cdef double total_mass = m_c + m_p
    cdef double polemass_length = m_p * l
    cdef double temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass
    cdef double theta_acc = (GRAVITY * sinth - costh * temp) / (
        l * (4.0 / 3.0 - m_p * costh * costh / total_mass))
    cdef double x_acc = temp - polemass_length * theta_acc * costh / total_mass
    x_dot = x_dot + TAU * x_acc
    x = x + TAU * x_dot
    theta_dot = theta_dot + TAU * theta_acc
    theta = theta + TAU * theta_dot
    return x, x_dot, theta, theta_dot, theta_acc


def manifold_flows(levels, is_open, resistances, pumps):
    cdef Py_ssize_t n = len(levels)
    cdef const double[::1] lv = np.ascontiguousarray(levels, dtype=np.float64)
    cdef const double[::1] rs = np.ascontiguousarray(resistances, dtype=np.float64)
    cdef const double[::1] pm = np.ascontiguousarray(pumps, dtype=np.float64)
    flows_arr = np.zeros(n)
    cdef double[::1] flows = flows_arr
    cdef long[::1] order = np.zeros(n, dtype=np.int64)
    cdef double[::1] caps = np.zeros(n)
    cdef double[::1] brk = np.zeros(n)
    cdef Py_ssize_t m = 0, i, j, k
    cdef double total_cap = 0.0, capped, num, den, cand, h = NAN
    for i in range(n):
        if is_open[i]:
            caps[i] = pm[i] if pm[i] < lv[i] else lv[i]
            total_cap += caps[i]
            brk[i] = lv[i] - caps[i] * rs[i]
            # insertion sort by breakpoint; stable like sorted()
            j = m
            while j > 0 and brk[order[j - 1]] > brk[i]:
                order[j] = order[j - 1]
                j -= 1
            order[j] = i
            m += 1
    if m < 2 or total_cap <= 0.0:
        return flows_arr, NAN
    for k in range(1, m + 1):
        capped = 0.0
        for j in range(k, m):
            capped += caps[order[j]]
        num = capped
        den = 0.0
        for j in range(k):
            num += lv[order[j]] / rs[order[j]]
            den += 1.0 / rs[order[j]]
        cand = num / den
        if k == m or cand <= brk[order[k]]:
            h = cand
            break
    for j in range(m):
        i = order[j]
        cand = (lv[i] - h) / rs[i]
        flows[i] = caps[i] if caps[i] < cand else cand
    return flows_arr, h


def discounted_returns(rewards, terminal, double gamma):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const cnp.uint8_t[::1] term = np.ascontiguousarray(terminal, dtype=np.uint8)
    cdef Py_ssize_t n = r.shape[0], t
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double running = 0.0
    for t in range(n - 1, -1, -1):
        if term[t]:
            running = 0.0
        running = r[t] + gamma * running
        out[t] = running
    return out_arr
