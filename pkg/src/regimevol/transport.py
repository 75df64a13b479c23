"""Exact discrete optimal transport between uniform empirical measures.

Masses are scaled to integers (each of ``m`` sources carries ``n/g`` units,
each of ``n`` sinks ``m/g`` units, ``g = gcd(m, n)``), so the transportation
simplex below pivots on exact integer flows and the optimal plan is a
vertex of the transportation polytope.
"""

from __future__ import annotations

from math import gcd

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment


@njit(cache=True)
def _northwest_corner(supply, demand):
    m, n = supply.shape[0], demand.shape[0]
    s = supply.copy()
    d = demand.copy()
    flow = np.zeros((m, n), dtype=np.int64)
    basic = np.zeros((m, n), dtype=np.bool_)
    i = 0
    j = 0
    while True:
        q = min(s[i], d[j])
        flow[i, j] = q
        basic[i, j] = True
        s[i] -= q
        d[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if (s[i] == 0 and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flow, basic


@njit(cache=True)
def _tree_parents(basic, root_row):
    """BFS over the basis tree. Nodes 0..m-1 are rows, m..m+n-1 columns."""
    m, n = basic.shape
    parent = np.full(m + n, -1, dtype=np.int64)
    seen = np.zeros(m + n, dtype=np.bool_)
    queue = np.empty(m + n, dtype=np.int64)
    head = 0
    tail = 0
    queue[tail] = root_row
    tail += 1
    seen[root_row] = True
    while head < tail:
        node = queue[head]
        head += 1
        if node < m:
            for j in range(n):
                if basic[node, j] and not seen[m + j]:
                    seen[m + j] = True
                    parent[m + j] = node
                    queue[tail] = m + j
                    tail += 1
        else:
            j = node - m
            for i in range(m):
                if basic[i, j] and not seen[i]:
                    seen[i] = True
                    parent[i] = node
                    queue[tail] = i
                    tail += 1
    return parent, queue, tail


@njit(cache=True)
def transport_simplex(supply, demand, cost, max_iter):
    """Min-cost integer flow for a balanced transportation problem.

    Returns the flow matrix and the number of pivots; a negative pivot
    count means the iteration limit was hit.
    """
    m, n = cost.shape
    flow, basic = _northwest_corner(supply, demand)
    scale = 0.0
    for i in range(m):
        for j in range(n):
            if abs(cost[i, j]) > scale:
                scale = abs(cost[i, j])
    eps = 1e-12 * (1.0 + scale)
    u = np.zeros(m)
    v = np.zeros(n)
    degenerate_run = 0
    for it in range(max_iter):
        parent, order, cnt = _tree_parents(basic, 0)
        u[0] = 0.0
        for k in range(1, cnt):
            node = order[k]
            par = parent[node]
            if node >= m:
                v[node - m] = cost[par, node - m] - u[par]
            else:
                u[node] = cost[node, par - m] - v[par - m]

        # Dantzig pricing; Bland's rule during long degenerate runs
        best = -eps
        p = -1
        q = -1
        bland = degenerate_run > m + n
        for i in range(m):
            for j in range(n):
                if not basic[i, j]:
                    r = cost[i, j] - u[i] - v[j]
                    if r < best:
                        best = r
                        p = i
                        q = j
                        if bland:
                            break
            if bland and p >= 0:
                break
        if p < 0:
            return flow, it

        # tree path from row p up to column q closes the cycle
        parent, order, cnt = _tree_parents(basic, p)
        path = np.empty(m + n, dtype=np.int64)
        length = 0
        node = m + q
        while node != p:
            path[length] = node
            length += 1
            node = parent[node]
        path[length] = p
        length += 1
        # path runs q(col) -> ... -> p(row); edge k joins path[k] and path[k+1]
        theta = -1
        leave_i = -1
        leave_j = -1
        for k in range(length - 1):
            a = path[k]
            b = path[k + 1]
            if a >= m:
                ci, cj = b, a - m
            else:
                ci, cj = a, b - m
            # edge touching column q is first and loses flow; signs alternate
            if k % 2 == 0:
                if theta < 0 or flow[ci, cj] < theta:
                    theta = flow[ci, cj]
                    leave_i = ci
                    leave_j = cj
        for k in range(length - 1):
            a = path[k]
            b = path[k + 1]
            if a >= m:
                ci, cj = b, a - m
            else:
                ci, cj = a, b - m
            if k % 2 == 0:
                flow[ci, cj] -= theta
            else:
                flow[ci, cj] += theta
        flow[p, q] += theta
        basic[p, q] = True
        basic[leave_i, leave_j] = False
        if theta == 0:
            degenerate_run += 1
        else:
            degenerate_run = 0
    return flow, -1


def squared_cost(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def uniform_plan(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal plan between uniform measures on the rows and columns of ``cost``.

    Returns the plan (entries sum to 1) and its cost.
    """
    cost = np.ascontiguousarray(cost, dtype=float)
    m, n = cost.shape
    if m == n:
        # uniform equal-size transport is an assignment problem
        r, c = linear_sum_assignment(cost)
        plan = np.zeros((m, n))
        plan[r, c] = 1.0 / m
        return plan, float(cost[r, c].sum() / m)
    g = gcd(m, n)
    supply = np.full(m, n // g, dtype=np.int64)
    demand = np.full(n, m // g, dtype=np.int64)
    flow, pivots = transport_simplex(supply, demand, cost, 50 * (m + n) * max(m, n) + 1000)
    if pivots < 0:
        raise RuntimeError("transportation simplex hit its iteration limit")
    total = m * n // g
    return flow / total, float(np.sum(flow * cost) / total)
