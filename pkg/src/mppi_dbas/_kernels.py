"""Compiled per-sample rollout and scoring loop used by the controller's hot path.

Mirrors ``controller.rollout_batch`` + ``controller.trajectory_cost`` (the
numpy reference implementation); the test-suite checks the two agree.
"""

from __future__ import annotations

import math

import numba
import numpy as np

INVERSE = 0
SHIFTED_LOG = 1


@numba.njit(cache=True)
def _barrier(h, kind, eps):
    if h <= 0.0:
        return math.inf
    if kind == INVERSE:
        if h >= eps:
            return 1.0 / h
        return 1.0 / eps - (h - eps) / (eps * eps)
    if h >= eps:
        return math.log1p(1.0 / h)
    return math.log1p(1.0 / eps) - (h - eps) / (eps * (eps + 1.0))


@numba.njit(cache=True)
def _wrap(a):
    return a - 2.0 * math.pi * math.ceil((a - math.pi) / (2.0 * math.pi))


@numba.njit(cache=True)
def pose_safety(x, y, th, offsets, centers, radii2, kind, eps):
    """Minimum margin and fused barrier value of one pose."""
    c = math.cos(th)
    s = math.sin(th)
    fused = 0.0
    worst = math.inf
    for p in range(offsets.shape[0]):
        px = x + c * offsets[p, 0] - s * offsets[p, 1]
        py = y + s * offsets[p, 0] + c * offsets[p, 1]
        for j in range(centers.shape[0]):
            dx = px - centers[j, 0]
            dy = py - centers[j, 1]
            h = dx * dx + dy * dy - radii2[j]
            if h < worst:
                worst = h
            fused += _barrier(h, kind, eps)
    return worst, fused


@numba.njit(cache=True)
def project_near(x, y, hint, half_width, ax, ay, ex, ey, len2):
    """Nearest polyline point scanning segments ``hint +- half_width``.

    Returns ``(distance, segment, t)``.
    """
    nseg = ax.shape[0]
    best = math.inf
    best_seg = 0
    best_t = 0.0
    for off in range(-half_width, half_width + 1):
        i = min(max(hint + off, 0), nseg - 1)
        rx = x - ax[i]
        ry = y - ay[i]
        t = (rx * ex[i] + ry * ey[i]) / len2[i]
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        dx = rx - t * ex[i]
        dy = ry - t * ey[i]
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
            best_seg = i
            best_t = t
    return math.sqrt(best), best_seg, best_t


@numba.njit(cache=True)
def rollout_and_score(
    state0,
    w0,
    margin0,
    controls,
    nominal,
    wheelbase,
    dt,
    offsets,
    centers,
    radii2,
    kind,
    eps,
    gamma_bas,
    beta_desired,
    path_seg,
    path_ref,
    hint0,
    half_width,
    weights,
    inv_cov,
    gamma_ctrl,
    r_barrier,
    uses_barrier,
    indicator_penalty,
):
    """Roll out and score ``B`` control sequences.

    ``path_seg`` rows are segment start x, start y, dx, dy, squared length;
    ``path_ref`` rows are per-sample heading and speed. ``weights`` holds the
    running then terminal (position, heading, speed) weights.
    """
    b_count, n, m = controls.shape
    states = np.empty((b_count, n + 1, 4))
    w_out = np.empty((b_count, n + 1))
    margins = np.empty((b_count, n + 1))
    costs = np.empty(b_count)
    ax, ay, ex, ey, len2 = path_seg[0], path_seg[1], path_seg[2], path_seg[3], path_seg[4]
    headings, speeds = path_ref[0], path_ref[1]
    has_obstacles = centers.shape[0] > 0
    for b in range(b_count):
        x, y, th, v = state0[0], state0[1], state0[2], state0[3]
        w = w0
        margin = margin0
        hint = hint0
        track = 0.0
        cb = 0.0
        collided = margin < 0.0
        for k in range(n + 1):
            if k > 0:
                steer = controls[b, k - 1, 0]
                accel = controls[b, k - 1, 1]
                nx = x + v * math.cos(th) * dt
                ny = y + v * math.sin(th) * dt
                nth = th + v * math.tan(steer) / wheelbase * dt
                v = v + accel * dt
                x, y, th = nx, ny, nth
                if has_obstacles:
                    margin, fused = pose_safety(x, y, th, offsets, centers, radii2, kind, eps)
                else:
                    margin, fused = math.inf, 0.0
                if math.isinf(w) or math.isinf(fused):
                    w = math.inf
                else:
                    w = fused - gamma_bas * (beta_desired - w)
                if margin < 0.0:
                    collided = True
            states[b, k, 0] = x
            states[b, k, 1] = y
            states[b, k, 2] = th
            states[b, k, 3] = v
            w_out[b, k] = w
            margins[b, k] = margin
            cb += r_barrier * w

            dist, hint, t = project_near(x, y, hint, half_width, ax, ay, ex, ey, len2)
            ref_h = headings[hint] + t * (headings[hint + 1] - headings[hint])
            ref_v = speeds[hint] + t * (speeds[hint + 1] - speeds[hint])
            o = 0 if k < n else 3
            herr = _wrap(th - ref_h)
            track += weights[o] * dist * dist + weights[o + 1] * herr * herr + weights[o + 2] * (v - ref_v) ** 2

        ctrl = 0.0
        for k in range(n):
            for i in range(m):
                a = 0.0
                for j in range(m):
                    a += nominal[k, j] * inv_cov[j, i]
                ctrl += a * controls[b, k, i]
        total = track + gamma_ctrl * ctrl
        if uses_barrier:
            total = math.inf if math.isinf(w) else total + cb
        elif collided:
            total += indicator_penalty
        costs[b] = total
    return states, w_out, margins, costs
