"""Compiled slot stepping, lookahead search and trajectory fitness.

All functions share one slot-update rule (``slot_step``) so that every planner,
the episode runner and the exhaustive oracle accumulate bit-identical rewards.
"""

import math

import numpy as np
from numba import njit

from ..rrm._kernels import STATUS_OK, rrm_kernel


@njit(cache=True)
def slot_step(node, t, cum, snr_tab, activity, qos_norm, bdt, tol, max_iter, max_sinr, new_cum):
    """Solve the slot RRM at lattice node ``node`` and write the updated cumulative bits.

    ``bdt = B·ΔT``. Returns ``(reward, status, mask, beta, psd, trace, n_iter)``.
    """
    n = cum.shape[0]
    snr = snr_tab[node]
    gs = np.empty(n)
    tau = np.empty(n)
    for i in range(n):
        gs[i] = cum[i] / bdt
        tau[i] = 1.0 / cum[i]
    mask, b, s, f, trace, it, status = rrm_kernel(snr, gs, qos_norm, tau, activity[t], tol, max_iter, max_sinr)
    for i in range(n):
        if mask[i]:
            new_cum[i] = cum[i] + b[i] * math.log2(1.0 + s[i] * snr[i]) * bdt
        else:
            new_cum[i] = cum[i]
    return f, status, mask, b, s, trace, it


@njit(cache=True)
def lookahead(t0, node0, cum0, base, depth, nbrs, n_nbrs, snr_tab, activity, qos_norm, bdt, tol, max_iter):
    """Depth-first enumeration of all move sequences of length ``depth`` from ``node0``.

    Leaf values accumulate left to right from ``base`` (the committed running
    total). The first lexicographic maximizer wins. Returns
    ``(first_move, best_value, n_nodes, status)``.
    """
    n = cum0.shape[0]
    cums = np.empty((depth + 1, n))
    cums[0] = cum0
    vals = np.empty(depth + 1)
    vals[0] = base
    nodes = np.empty(depth + 1, dtype=np.int64)
    nodes[0] = node0
    choice = np.full(depth + 1, -1, dtype=np.int64)
    best = -np.inf
    best_first = -1
    visited = 0
    bad = STATUS_OK
    level = 0
    while level >= 0:
        choice[level] += 1
        if choice[level] >= n_nbrs[nodes[level]]:
            choice[level] = -1
            level -= 1
            continue
        nxt = nbrs[nodes[level], choice[level]]
        f, st, _, _, _, _, _ = slot_step(nxt, t0 + level, cums[level], snr_tab, activity, qos_norm, bdt,
                                         tol, max_iter, False, cums[level + 1])
        visited += 1
        if st != STATUS_OK:
            bad = st
        vals[level + 1] = vals[level] + f
        nodes[level + 1] = nxt
        if level + 1 == depth:
            if vals[depth] > best:
                best = vals[depth]
                best_first = choice[0]
        else:
            level += 1
    return best_first, best, visited, bad


@njit(cache=True)
def path_value(path, cum0, snr_tab, activity, qos_norm, bdt, tol, max_iter):
    """Total reward of visiting ``path[t-1]`` in slot ``t`` for ``t = 1..T``."""
    cum = cum0.copy()
    nxt = np.empty_like(cum)
    total = 0.0
    bad = STATUS_OK
    for k in range(path.shape[0]):
        f, st, _, _, _, _, _ = slot_step(path[k], k + 1, cum, snr_tab, activity, qos_norm, bdt,
                                         tol, max_iter, False, nxt)
        if st != STATUS_OK:
            bad = st
        total += f
        cum, nxt = nxt, cum
    return total, bad


@njit(cache=True)
def frozen_path_value(path, cum0, snr_tab, masks, betas, psds, qos_norm, bdt):
    """Reward of ``path`` when association, bandwidth and PSD are frozen per slot.

    A frozen user whose rate at the new position falls below its QoS floor is
    treated as dropped for that slot.
    """
    n = cum0.shape[0]
    cum = cum0.copy()
    total = 0.0
    for k in range(path.shape[0]):
        snr = snr_tab[path[k]]
        for i in range(n):
            if not masks[k, i]:
                continue
            r = betas[k, i] * math.log2(1.0 + psds[k, i] * snr[i])
            if r < qos_norm[i] * (1.0 - 1e-9):
                continue
            total += math.log1p(r / (cum[i] / bdt))
            cum[i] = cum[i] + r * bdt
    return total
