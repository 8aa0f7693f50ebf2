"""Compiled inner loop of the pairwise Frank-Wolfe solver.

Paths are stored per commodity as rows of an edge-incidence array with a
flow mass each. All routines are deterministic: Dijkstra scans nodes in
index order and replaces labels only on strict improvement.
"""

import numpy as np
from numba import njit

NOT_CONVERGED = 0
CONVERGED = 1
SLOTS_EXHAUSTED = 2


@njit(cache=True)
def link_terms(X, t0, cap, b, p):
    n = X.shape[0]
    t = np.empty(n)
    t1 = np.empty(n)
    for e in range(n):
        r = X[e] / cap[e]
        if r > 0.0:
            rp = r ** (p - 1.0)
            t[e] = t0[e] * (1.0 + b * rp * r)
            t1[e] = t0[e] * b * p * rp / cap[e]
        else:
            t[e] = t0[e]
            t1[e] = 0.0
    return t, t1


@njit(cache=True)
def objective_value(X, W, t0, cap, b, p):
    total = 0.0
    for e in range(X.shape[0]):
        r = X[e] / cap[e]
        total += t0[e] * (1.0 + b * r ** p) * W[e] if r > 0.0 else t0[e] * W[e]
    return total


@njit(cache=True)
def shortest_incidence(cost, out_ptr, out_edges, heads, tails, n_nodes, origin, dest, inc):
    """Fill ``inc`` with the edge incidence of a min-cost origin->dest path; return its cost."""
    dist = np.full(n_nodes, np.inf)
    pred = np.full(n_nodes, -1)
    done = np.zeros(n_nodes, dtype=np.bool_)
    dist[origin] = 0.0
    for _ in range(n_nodes):
        u = -1
        best = np.inf
        for v in range(n_nodes):
            if not done[v] and dist[v] < best:
                best = dist[v]
                u = v
        if u < 0 or u == dest:
            break
        done[u] = True
        for k in range(out_ptr[u], out_ptr[u + 1]):
            e = out_edges[k]
            j = heads[e]
            nd = best + cost[e]
            if nd < dist[j]:
                dist[j] = nd
                pred[j] = e
    inc[:] = 0
    if not np.isfinite(dist[dest]):
        return np.inf
    j = dest
    while j != origin:
        e = pred[j]
        inc[e] = 1
        j = tails[e]
    return dist[dest]


@njit(cache=True)
def _path_cost(inc, cost):
    total = 0.0
    for e in range(inc.shape[0]):
        if inc[e] != 0:
            total += cost[e]
    return total


@njit(cache=True)
def _find_slot(incs, count, inc):
    for k in range(count):
        same = True
        for e in range(inc.shape[0]):
            if incs[k, e] != inc[e]:
                same = False
                break
        if same:
            return k
    return -1


@njit(cache=True)
def _pairwise_mu(X, W, wm, delta, idx, n_idx, t0, cap, b, p, limit):
    """Exact step along one commodity's pairwise direction; convex in mu."""

    def slope_curv(mu):
        g = 0.0
        h = 0.0
        for a in range(n_idx):
            e = idx[a]
            dk = delta[e]
            r = (X[e] + mu * dk) / cap[e]
            if r > 0.0:
                rp2 = r ** (p - 2.0)
                t1 = t0[e] * b * p * rp2 * r / cap[e]
                t2 = t0[e] * b * p * (p - 1.0) * rp2 / (cap[e] * cap[e])
                t = t0[e] * (1.0 + b * rp2 * r * r)
            else:
                t1 = 0.0
                t2 = 0.0
                t = t0[e]
            Wm = W[e] + mu * wm * dk
            g += dk * (t1 * Wm + wm * t)
            h += dk * dk * (t2 * Wm + 2.0 * wm * t1)
        return g, h

    g, h = slope_curv(0.0)
    if g >= 0.0:
        return 0.0
    g, h = slope_curv(limit)
    if g <= 0.0:
        return limit
    lo = 0.0
    hi = limit
    mu = 0.5 * limit
    for _ in range(100):
        g, h = slope_curv(mu)
        if g > 0.0:
            hi = mu
        else:
            lo = mu
        if hi - lo <= 1e-13 * limit or g == 0.0:
            break
        step = mu - g / h if h > 0.0 else -1.0
        if lo < step < hi:
            mu = step
        else:
            mu = 0.5 * (lo + hi)
    return mu


@njit(cache=True)
def _joint_slope(lam, X, W, D, Om, t0, cap, b, p):
    s = 0.0
    for e in range(X.shape[0]):
        if D[e] == 0.0 and Om[e] == 0.0:
            continue
        Xl = X[e] + lam * D[e]
        r = Xl / cap[e]
        if r > 0.0:
            rp = r ** (p - 1.0)
            t = t0[e] * (1.0 + b * rp * r)
            t1 = t0[e] * b * p * rp / cap[e]
        else:
            t = t0[e]
            t1 = 0.0
        s += t1 * D[e] * (W[e] + lam * Om[e]) + t * Om[e]
    return s


@njit(cache=True)
def _remove_slot(incs, mass, count, k):
    last = count - 1
    if k != last:
        incs[k, :] = incs[last, :]
        mass[k] = mass[last]
    mass[last] = 0.0
    return last


@njit(cache=True)
def pairwise_frank_wolfe(t0, cap, b, p, q, w, out_ptr, out_edges, heads, tails, n_nodes,
                         cm, cn, co, cd, ca, n_trips, tol, max_iter, slots):
    n_e = t0.shape[0]
    n_m = w.shape[0]
    n_c = cm.shape[0]
    x = np.zeros((n_e, n_m, n_trips))
    incs = np.zeros((n_c, slots, n_e), dtype=np.int8)
    mass = np.zeros((n_c, slots))
    count = np.zeros(n_c, dtype=np.int64)
    targets = np.zeros((n_c, n_e), dtype=np.int8)
    tcost = np.zeros(n_c)
    G = np.empty((n_e, n_m))
    X = q.copy()
    W = np.zeros(n_e)

    t, t1 = link_terms(X, t0, cap, b, p)
    for m in range(n_m):
        for e in range(n_e):
            G[e, m] = w[m] * t[e]
    for c in range(n_c):
        shortest_incidence(G[:, cm[c]], out_ptr, out_edges, heads, tails, n_nodes, co[c], cd[c], incs[c, 0])
        mass[c, 0] = ca[c]
        count[c] = 1
        for e in range(n_e):
            if incs[c, 0, e]:
                x[e, cm[c], cn[c]] += ca[c]
                X[e] += ca[c]
                W[e] += w[cm[c]] * ca[c]
    value = objective_value(X, W, t0, cap, b, p)

    delta = np.zeros(n_e)
    idx = np.zeros(n_e, dtype=np.int64)
    D = np.zeros(n_e)
    Om = np.zeros(n_e)
    away = np.zeros(n_c, dtype=np.int64)
    gap = 0.0
    # the extra pass only measures the gap of the final state
    for it in range(1, max_iter + 2):
        t, t1 = link_terms(X, t0, cap, b, p)
        for m in range(n_m):
            for e in range(n_e):
                G[e, m] = w[m] * t[e] + t1[e] * W[e]
        gap = 0.0
        for c in range(n_c):
            col = G[:, cm[c]]
            tcost[c] = shortest_incidence(col, out_ptr, out_edges, heads, tails, n_nodes, co[c], cd[c], targets[c])
            for k in range(count[c]):
                gap += mass[c, k] * _path_cost(incs[c, k], col)
            gap -= ca[c] * tcost[c]
        if gap < 0.0:
            gap = 0.0
        if gap <= tol * max(value, 1e-300):
            return x, value, gap, min(it, max_iter), CONVERGED
        if it > max_iter:
            break

        # joint step over all commodities' costliest paths
        D[:] = 0.0
        Om[:] = 0.0
        moving = False
        for c in range(n_c):
            col = G[:, cm[c]]
            best = -1.0
            a = 0
            for k in range(count[c]):
                pc = _path_cost(incs[c, k], col)
                if pc > best:
                    best = pc
                    a = k
            away[c] = a
            if _find_slot(incs[c], count[c], targets[c]) == a:
                away[c] = -1
                continue
            moving = True
            wm = w[cm[c]]
            for e in range(n_e):
                de = mass[c, a] * (targets[c, e] - incs[c, a, e])
                D[e] += de
                Om[e] += wm * de
        if moving and _joint_slope(0.0, X, W, D, Om, t0, cap, b, p) < 0.0:
            if _joint_slope(1.0, X, W, D, Om, t0, cap, b, p) <= 0.0:
                lam = 1.0
            else:
                lo = 0.0
                hi = 1.0
                while hi - lo > 1e-12:
                    mid = 0.5 * (lo + hi)
                    if _joint_slope(mid, X, W, D, Om, t0, cap, b, p) > 0.0:
                        hi = mid
                    else:
                        lo = mid
                lam = lo
            Xn = X + lam * D
            Wn = W + lam * Om
            if lam > 0.0 and objective_value(Xn, Wn, t0, cap, b, p) < value:
                for c in range(n_c):
                    a = away[c]
                    if a < 0:
                        continue
                    moved = lam * mass[c, a]
                    for e in range(n_e):
                        x[e, cm[c], cn[c]] += moved * (targets[c, e] - incs[c, a, e])
                    mass[c, a] -= moved
                    k = _find_slot(incs[c], count[c], targets[c])
                    if mass[c, a] <= 1e-15 * ca[c]:
                        count[c] = _remove_slot(incs[c], mass[c], count[c], a)
                        k = _find_slot(incs[c], count[c], targets[c])
                    if k < 0:
                        if count[c] >= slots:
                            return x, value, gap, it, SLOTS_EXHAUSTED
                        k = count[c]
                        incs[c, k, :] = targets[c]
                        count[c] += 1
                    mass[c, k] += moved
                X = Xn
                W = Wn

        # per commodity: shift from every other active path to the target,
        # costliest first under this iteration's marginal costs
        for c in range(n_c):
            m = cm[c]
            col = G[:, m]
            k_t = _find_slot(incs[c], count[c], targets[c])
            if k_t < 0:
                if count[c] >= slots:
                    return x, value, gap, it, SLOTS_EXHAUSTED
                k_t = count[c]
                incs[c, k_t, :] = targets[c]
                mass[c, k_t] = 0.0
                count[c] += 1
            n_src = count[c]
            costs = np.empty(n_src)
            for k in range(n_src):
                costs[k] = -_path_cost(incs[c, k], col)
            order = np.argsort(costs, kind="mergesort")
            # slots may be compacted while iterating; track paths by content
            sources = np.empty((n_src, n_e), dtype=np.int8)
            for r in range(n_src):
                sources[r] = incs[c, order[r]]
            for r in range(n_src):
                k_s = _find_slot(incs[c], count[c], sources[r])
                k_t = _find_slot(incs[c], count[c], targets[c])
                if k_s < 0 or k_s == k_t:
                    continue
                n_idx = 0
                for e in range(n_e):
                    dk = targets[c, e] - incs[c, k_s, e]
                    delta[e] = dk
                    if dk != 0:
                        idx[n_idx] = e
                        n_idx += 1
                if n_idx == 0:
                    continue
                limit = mass[c, k_s]
                mu = _pairwise_mu(X, W, w[m], delta, idx, n_idx, t0, cap, b, p, limit)
                if mu <= 0.0:
                    continue
                if mu >= limit:
                    mu = limit
                for a in range(n_idx):
                    e = idx[a]
                    x[e, m, cn[c]] += mu * delta[e]
                    X[e] += mu * delta[e]
                    W[e] += mu * w[m] * delta[e]
                mass[c, k_t] += mu
                mass[c, k_s] -= mu
                if mu >= limit:
                    count[c] = _remove_slot(incs[c], mass[c], count[c], k_s)
            k_t = _find_slot(incs[c], count[c], targets[c])
            if k_t >= 0 and mass[c, k_t] <= 0.0:
                count[c] = _remove_slot(incs[c], mass[c], count[c], k_t)

        for e in range(n_e):
            s = 0.0
            ws = 0.0
            for m in range(n_m):
                for n in range(n_trips):
                    if x[e, m, n] < 0.0:
                        x[e, m, n] = 0.0
                    s += x[e, m, n]
                    ws += w[m] * x[e, m, n]
            X[e] = s + q[e]
            W[e] = ws
        value = objective_value(X, W, t0, cap, b, p)
    return x, value, gap, max_iter, NOT_CONVERGED
