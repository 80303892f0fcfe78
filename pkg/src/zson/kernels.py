"""Hot numeric kernels: grid Dijkstra, ray casting, field-of-view tests, GAE.

Every function here is compiled by numba when available (see
:mod:`zson._accel`) and otherwise runs as interpreted numpy code. Keep them
free of Python objects other than numpy arrays, scalars and tuples.

Grid convention: ``occ[r, c]`` is true for blocked cells; cell ``(r, c)``
covers ``x in [c*cell, (c+1)*cell)`` and ``y in [r*cell, (r+1)*cell)``.
Headings are degrees counter-clockwise from +x.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from ._accel import jit

SQRT2 = math.sqrt(2.0)
_EPS = 1e-12
_TIE = 1e-12


@jit
def distance_field(occ, src_r, src_c):
    """Multi-source Dijkstra on the 8-connected free-cell graph.

    Path lengths are tracked exactly as ``(n_straight, n_diagonal)`` move
    counts; because sqrt(2) is irrational two different count pairs never
    describe the same length, so ties cannot make the result order-dependent.
    Returns two int64 arrays, ``-1`` marking unreachable cells.
    """
    H, W = occ.shape
    ns = np.full((H, W), -1, dtype=np.int64)
    nd = np.full((H, W), -1, dtype=np.int64)
    key = np.full((H, W), np.inf)
    done = np.zeros((H, W), dtype=np.bool_)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for k in range(src_r.shape[0]):
        r = src_r[k]
        c = src_c[k]
        if occ[r, c] or key[r, c] == 0.0:
            continue
        ns[r, c] = 0
        nd[r, c] = 0
        key[r, c] = 0.0
        heapq.heappush(heap, (0.0, np.int64(r * W + c)))
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        r = idx // W
        c = idx % W
        if done[r, c]:
            continue
        done[r, c] = True
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                rr = r + dr
                cc = c + dc
                if rr < 0 or rr >= H or cc < 0 or cc >= W:
                    continue
                if occ[rr, cc] or done[rr, cc]:
                    continue
                if dr != 0 and dc != 0:
                    a = ns[r, c]
                    b = nd[r, c] + 1
                else:
                    a = ns[r, c] + 1
                    b = nd[r, c]
                kk = a + b * SQRT2
                if kk < key[rr, cc]:
                    key[rr, cc] = kk
                    ns[rr, cc] = a
                    nd[rr, cc] = b
                    heapq.heappush(heap, (kk, np.int64(rr * W + cc)))
    return ns, nd


@jit
def _blocked(occ, r, c):
    H, W = occ.shape
    if r < 0 or r >= H or c < 0 or c >= W:
        return True
    return occ[r, c]


@jit
def ray_distance(occ, cell, x, y, theta, max_range):
    """Distance from (x, y) along angle ``theta`` (radians) to the first blocked
    cell, clamped to ``max_range``. Grid edges count as blocked.

    A ray passing exactly through a cell corner is stopped only when both
    side cells are blocked, mirroring diagonal moves on the 8-connected graph.
    """
    c = int(math.floor(x / cell))
    r = int(math.floor(y / cell))
    if _blocked(occ, r, c):
        return 0.0
    dx = math.cos(theta)
    dy = math.sin(theta)
    if dx > _EPS:
        step_c = 1
        t_max_x = ((c + 1) * cell - x) / dx
        t_dx = cell / dx
    elif dx < -_EPS:
        step_c = -1
        t_max_x = (c * cell - x) / dx
        t_dx = -cell / dx
    else:
        step_c = 0
        t_max_x = np.inf
        t_dx = np.inf
    if dy > _EPS:
        step_r = 1
        t_max_y = ((r + 1) * cell - y) / dy
        t_dy = cell / dy
    elif dy < -_EPS:
        step_r = -1
        t_max_y = (r * cell - y) / dy
        t_dy = -cell / dy
    else:
        step_r = 0
        t_max_y = np.inf
        t_dy = np.inf
    while True:
        if abs(t_max_x - t_max_y) <= _TIE:
            t = t_max_x
            if t >= max_range:
                return max_range
            if _blocked(occ, r + step_r, c) and _blocked(occ, r, c + step_c):
                return t
            r += step_r
            c += step_c
            t_max_x += t_dx
            t_max_y += t_dy
        elif t_max_x < t_max_y:
            t = t_max_x
            if t >= max_range:
                return max_range
            c += step_c
            t_max_x += t_dx
        else:
            t = t_max_y
            if t >= max_range:
                return max_range
            r += step_r
            t_max_y += t_dy
        if _blocked(occ, r, c):
            return t


@jit
def wrap_degrees(a):
    """Map an angle to (-180, 180]."""
    a = a - 360.0 * math.floor(a / 360.0)
    if a > 180.0:
        a -= 360.0
    return a


@jit
def visible_mask(occ, cell, x, y, heading, view_range, hfov, obj_x, obj_y):
    n = obj_x.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    half = 0.5 * hfov
    for i in range(n):
        ddx = obj_x[i] - x
        ddy = obj_y[i] - y
        dist = math.sqrt(ddx * ddx + ddy * ddy)
        if dist < 1e-9:
            out[i] = True
            continue
        if dist > view_range + 1e-9:
            continue
        bearing = math.atan2(ddy, ddx)
        rel = wrap_degrees(math.degrees(bearing) - heading)
        if abs(rel) > half + 1e-9:
            continue
        if ray_distance(occ, cell, x, y, bearing, dist) >= dist - 1e-9:
            out[i] = True
    return out


@jit
def observe_sectors(occ, cell, x, y, heading, view_range, hfov, n_bins, obj_x, obj_y, obj_cid, n_concepts):
    """Per-sector [normalized free distance, multi-hot concepts], left to right."""
    stride = 1 + n_concepts
    out = np.zeros(n_bins * stride, dtype=np.float32)
    width = hfov / n_bins
    half = 0.5 * hfov
    for k in range(n_bins):
        ang = heading + half - (k + 0.5) * width
        d = ray_distance(occ, cell, x, y, math.radians(ang), view_range)
        out[k * stride] = d / view_range
    vis = visible_mask(occ, cell, x, y, heading, view_range, hfov, obj_x, obj_y)
    for i in range(obj_x.shape[0]):
        if not vis[i]:
            continue
        ddx = obj_x[i] - x
        ddy = obj_y[i] - y
        if ddx * ddx + ddy * ddy < 1e-18:
            rel = 0.0
        else:
            rel = wrap_degrees(math.degrees(math.atan2(ddy, ddx)) - heading)
        k = int(math.floor((half - rel) / width))
        if k < 0:
            k = 0
        elif k >= n_bins:
            k = n_bins - 1
        out[k * stride + 1 + obj_cid[i]] = 1.0
    return out


@jit
def gae(rewards, values, dones, bootstrap, gamma, tau):
    """Generalized advantage estimates for (T, N) arrays; un-normalized."""
    T, N = rewards.shape
    adv = np.zeros((T, N), dtype=np.float64)
    for n in range(N):
        last = 0.0
        for t in range(T - 1, -1, -1):
            if t == T - 1:
                next_v = bootstrap[n]
            else:
                next_v = values[t + 1, n]
            nonterm = 1.0 - dones[t, n]
            delta = rewards[t, n] + gamma * next_v * nonterm - values[t, n]
            last = delta + gamma * tau * nonterm * last
            adv[t, n] = last
    return adv
