"""Compiled inner loops of the per-slot radio resource management.

All kernels work in normalized units so both budgets equal one:
bandwidth ``b = β/B``, PSD ``s = ρ·B/P`` (uniform PSD is ``s = 1``) and power
share ``s·b = ρ·β/P``. ``snr`` is the SNR at uniform PSD, i.e. ``ĝ = g·P/B``
with ``g`` the gain over noise, so the spectral efficiency is ``log2(1 + s·ĝ)``.

A served user contributes ``log1p(b / c)`` to the slot reward where the
"ground height" ``c = cum / (B·e·ΔT)`` is the inverse of the water-filling
weight.
"""

import math

import numpy as np
from numba import njit

INFEASIBLE = -1.0
LN2 = math.log(2.0)

STATUS_OK = 0
STATUS_INFEASIBLE = 2
STATUS_NONCONVERGED = 3


@njit(cache=True)
def waterfill(c, floors, budget, out):
    """Exact ``Σ max(floor_i, L − c_i) = budget`` by scanning sorted breakpoints.

    Writes the allocation into ``out`` and returns the water level ``L``
    (``INFEASIBLE`` if the floors alone exceed the budget, ``0`` if empty).
    """
    n = c.shape[0]
    if n == 0:
        return 0.0
    fsum = 0.0
    for i in range(n):
        fsum += floors[i]
    if fsum > budget * (1.0 + 1e-12):
        for i in range(n):
            out[i] = floors[i]
        return INFEASIBLE
    brk = np.empty(n)
    for i in range(n):
        brk[i] = floors[i] + c[i]
    order = np.argsort(brk)
    # users order[:k] are above their floor
    floor_rest = fsum
    free_c = 0.0
    level = brk[order[0]]
    if fsum >= budget:
        level = brk[order[0]]
    else:
        for k in range(1, n + 1):
            j = order[k - 1]
            floor_rest -= floors[j]
            free_c += c[j]
            level = (budget - floor_rest + free_c) / k
            if k == n or level <= brk[order[k]]:
                break
    for i in range(n):
        v = level - c[i]
        out[i] = v if v > floors[i] else floors[i]
    return level


@njit(cache=True)
def set_value(b, c):
    v = 0.0
    for i in range(b.shape[0]):
        if b[i] > 0.0:
            v += math.log1p(b[i] / c[i])
    return v


@njit(cache=True)
def associate(c, floors, eligible):
    """Greedy incremental association under uniform PSD.

    From the empty set, repeatedly add the eligible user whose inclusion
    (followed by a fresh water-fill) gives the largest objective; stop when no
    addition improves it by more than 1e-12. Equal objectives go to the lower
    index. Returns ``(mask, bandwidth, value, n_rounds)``.
    """
    n = c.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    beta = np.zeros(n)
    cur_val = 0.0
    cur_floor = 0.0
    idx = np.empty(n, dtype=np.int64)
    sub_c = np.empty(n)
    sub_f = np.empty(n)
    sub_b = np.empty(n)
    rounds = 0
    while True:
        rounds += 1
        m = 0
        for i in range(n):
            if mask[i]:
                idx[m] = i
                m += 1
        best_val = cur_val
        best_i = -1
        for i in range(n):
            if mask[i] or not eligible[i]:
                continue
            if cur_floor + floors[i] > 1.0:
                continue
            for q in range(m):
                sub_c[q] = c[idx[q]]
                sub_f[q] = floors[idx[q]]
            sub_c[m] = c[i]
            sub_f[m] = floors[i]
            lvl = waterfill(sub_c[: m + 1], sub_f[: m + 1], 1.0, sub_b[: m + 1])
            if lvl == INFEASIBLE:
                continue
            v = set_value(sub_b[: m + 1], sub_c[: m + 1])
            if v > best_val + 1e-12:
                best_val = v
                best_i = i
        if best_i < 0:
            break
        mask[best_i] = True
        cur_val = best_val
        cur_floor += floors[best_i]
    m = 0
    for i in range(n):
        if mask[i]:
            idx[m] = i
            m += 1
    if m > 0:
        for q in range(m):
            sub_c[q] = c[idx[q]]
            sub_f[q] = floors[idx[q]]
        waterfill(sub_c[:m], sub_f[:m], 1.0, sub_b[:m])
        for q in range(m):
            beta[idx[q]] = sub_b[q]
    return mask, beta, cur_val, rounds


@njit(cache=True)
def _band_sum(lam1, lam2, c, floors, a, out):
    s = 0.0
    ds = 0.0
    for i in range(c.shape[0]):
        o = lam1 + lam2 * a[i]
        v = (1.0 / o - c[i]) if o > 0.0 else np.inf
        if v > floors[i]:
            out[i] = v
            ds -= 1.0 / (o * o)
        else:
            out[i] = floors[i]
        s += out[i]
    return s, ds


@njit(cache=True)
def _solve_lam1(lam2, c, floors, a, out):
    """Smallest ``λ1 ≥ 0`` with ``Σβ ≤ 1`` for fixed ``λ2`` (safeguarded Newton)."""
    n = c.shape[0]
    if lam2 > 0.0:
        pos = True
        for i in range(n):
            if a[i] <= 0.0:
                pos = False
        if pos:
            s, _ = _band_sum(0.0, lam2, c, floors, a, out)
            if s <= 1.0:
                return 0.0
    lo = 0.0
    hi = 1.0
    s, _ = _band_sum(hi, lam2, c, floors, a, out)
    while s > 1.0:
        lo = hi
        hi *= 2.0
        s, _ = _band_sum(hi, lam2, c, floors, a, out)
    x = hi
    for _ in range(200):
        s, ds = _band_sum(x, lam2, c, floors, a, out)
        h = s - 1.0
        if abs(h) <= 1e-14:
            break
        if h > 0.0:
            lo = x
        else:
            hi = x
        if ds < 0.0:
            xn = x - h / ds
        else:
            xn = 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
        x = xn
    # end on the feasible side
    s, _ = _band_sum(x, lam2, c, floors, a, out)
    if s > 1.0 + 1e-13:
        x = hi
        _band_sum(x, lam2, c, floors, a, out)
    return x


@njit(cache=True)
def _power(out, a):
    p = 0.0
    for i in range(out.shape[0]):
        p += a[i] * out[i]
    return p


@njit(cache=True)
def allocate_bandwidth(c, floors, a, out):
    """Bandwidth allocation with fixed PSD under both budgets (exact KKT solve).

    Maximizes ``Σ log1p(b_i/c_i)`` s.t. ``Σ b ≤ 1``, ``Σ a·b ≤ 1``, ``b ≥ floors``.
    Stationarity gives ``b_i = max(floor_i, 1/(λ1 + λ2·a_i) − c_i)``; ``λ1`` is
    found for each ``λ2`` and ``λ2`` by safeguarded secant on the power residual.
    Returns ``(λ1, λ2, status)``.
    """
    n = c.shape[0]
    if n == 0:
        return 0.0, 0.0, STATUS_OK
    fs = 0.0
    fp = 0.0
    for i in range(n):
        fs += floors[i]
        fp += a[i] * floors[i]
    if fs > 1.0 + 1e-9 or fp > 1.0 + 1e-9:
        for i in range(n):
            out[i] = floors[i]
        return 0.0, 0.0, STATUS_INFEASIBLE
    lvl = waterfill(c, floors, 1.0, out)
    if lvl == INFEASIBLE:
        return 0.0, 0.0, STATUS_INFEASIBLE
    if _power(out, a) <= 1.0 + 1e-12:
        return 1.0 / lvl, 0.0, STATUS_OK
    # power budget binds; π(λ2) is decreasing
    lo = 0.0
    plo = _power(out, a) - 1.0
    hi = float(n)
    lam1 = _solve_lam1(hi, c, floors, a, out)
    phi = _power(out, a) - 1.0
    while phi > 0.0:
        lo = hi
        plo = phi
        hi *= 4.0
        lam1 = _solve_lam1(hi, c, floors, a, out)
        phi = _power(out, a) - 1.0
    side = 0
    x = hi
    for _ in range(200):
        # Illinois false position with bisection fallback
        if plo != phi:
            x = hi - phi * (hi - lo) / (phi - plo)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        lam1 = _solve_lam1(x, c, floors, a, out)
        px = _power(out, a) - 1.0
        if abs(px) <= 1e-13 or hi - lo <= 1e-15 * hi:
            break
        if px > 0.0:
            lo = x
            plo = px
            if side == -1:
                phi *= 0.5
            side = -1
        else:
            hi = x
            phi = px
            if side == 1:
                plo *= 0.5
            side = 1
    if _power(out, a) > 1.0 + 1e-12:
        x = hi
        lam1 = _solve_lam1(x, c, floors, a, out)
    return lam1, x, STATUS_OK


@njit(cache=True)
def control_power(b, snr, tau, qos_norm, out):
    """Closed-form PSD for fixed bandwidth (linearized reward, floors from QoS).

    ``s_i = max(ζ_i, τ_i·L/b_i − 1/ĝ_i)`` with ``L`` (inverse water level) set so
    the power shares sum to one. ``qos_norm = r/B`` so that
    ``ζ_i = (2^{qos_norm_i/b_i} − 1)/ĝ_i``. Users with ``b_i = 0`` get zero PSD.
    Returns ``(L, status)``.
    """
    n = b.shape[0]
    z = np.zeros(n)
    cc = np.zeros(n)
    zsum = 0.0
    m = 0
    for i in range(n):
        out[i] = 0.0
        if b[i] > 0.0:
            zeta = (2.0 ** (qos_norm[i] / b[i]) - 1.0) / snr[i]
            z[i] = b[i] * zeta
            cc[i] = b[i] / snr[i]
            zsum += z[i]
            m += 1
    if m == 0:
        return 0.0, STATUS_OK
    if zsum > 1.0 + 1e-9:
        for i in range(n):
            if b[i] > 0.0:
                out[i] = z[i] / b[i]
        return INFEASIBLE, STATUS_INFEASIBLE
    idx = np.empty(m, dtype=np.int64)
    brk = np.empty(m)
    k = 0
    for i in range(n):
        if b[i] > 0.0:
            idx[k] = i
            brk[k] = (z[i] + cc[i]) / tau[i]
            k += 1
    order = np.argsort(brk)
    floor_rest = zsum
    free_c = 0.0
    free_t = 0.0
    level = brk[order[0]]
    if zsum < 1.0:
        for q in range(1, m + 1):
            j = idx[order[q - 1]]
            floor_rest -= z[j]
            free_c += cc[j]
            free_t += tau[j]
            level = (1.0 - floor_rest + free_c) / free_t
            if q == m or level <= brk[order[q]]:
                break
    psum = 0.0
    for q in range(m):
        j = idx[q]
        p = tau[j] * level - cc[j]
        if p < z[j]:
            p = z[j]
        out[j] = p / b[j]
        psum += p
    if psum > 1.0:
        # rounding guard: shrink the part above the floors
        excess = psum - 1.0
        above = psum - zsum
        if above > 0.0:
            f = 1.0 - excess / above
            for q in range(m):
                j = idx[q]
                p = out[j] * b[j]
                out[j] = (z[j] + (p - z[j]) * f) / b[j]
    return level, STATUS_OK


@njit(cache=True)
def slot_reward(b, s, snr, ground_scale):
    """``Σ log1p(B·b·log2(1+s·ĝ)·ΔT/cum)``; ``ground_scale = cum/(B·ΔT)``."""
    v = 0.0
    for i in range(b.shape[0]):
        if b[i] > 0.0 and s[i] > 0.0:
            e = math.log2(1.0 + s[i] * snr[i])
            v += math.log1p(b[i] * e / ground_scale[i])
    return v


@njit(cache=True)
def _alternate(mask, beta, psd, snr, ground_scale, qos_norm, tau, tol, max_iter, trace):
    """RA/PC alternation on a fixed association. Mutates ``beta``/``psd``.

    A PC step whose true reward is lower than before is rejected and the loop
    stops (the linearized PC objective is only a surrogate).
    """
    n = mask.shape[0]
    m = 0
    for i in range(n):
        if mask[i]:
            m += 1
    idx = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(n):
        if mask[i]:
            idx[k] = i
            k += 1
    sb = np.empty(m)
    ss = np.empty(m)
    sg = np.empty(m)
    sgs = np.empty(m)
    sq = np.empty(m)
    st = np.empty(m)
    sc = np.empty(m)
    sf = np.empty(m)
    nb = np.empty(m)
    ns = np.empty(m)
    for q in range(m):
        j = idx[q]
        sb[q] = beta[j]
        ss[q] = psd[j]
        sg[q] = snr[j]
        sgs[q] = ground_scale[j]
        sq[q] = qos_norm[j]
        st[q] = tau[j]
    f = slot_reward(sb, ss, sg, sgs)
    trace[0] = f
    it = 0
    status = STATUS_NONCONVERGED
    if m == 0:
        return f, 0, STATUS_OK
    for it in range(1, max_iter + 1):
        for q in range(m):
            e = math.log2(1.0 + ss[q] * sg[q])
            if e > 0.0:
                sc[q] = sgs[q] / e
                sf[q] = sq[q] / e
            else:
                sc[q] = np.inf
                sf[q] = 0.0
        _, _, st_ra = allocate_bandwidth(sc, sf, ss, nb)
        if st_ra != STATUS_OK:
            return f, it, st_ra
        f_ra = slot_reward(nb, ss, sg, sgs)
        if f_ra < f:
            # RA is exact on the true reward; a drop is rounding noise
            trace[it] = f
            status = STATUS_OK
            break
        _, st_pc = control_power(nb, sg, st, sq, ns)
        if st_pc != STATUS_OK:
            return f, it, st_pc
        f_new = slot_reward(nb, ns, sg, sgs)
        stop = False
        for q in range(m):
            sb[q] = nb[q]
        if f_new >= f_ra:
            for q in range(m):
                ss[q] = ns[q]
            f_next = f_new
        else:
            # linearized PC lowered the true reward: keep the RA step and stop
            f_next = f_ra
            stop = True
        f_prev = f
        f = f_next
        trace[it] = f
        if stop or abs(f - f_prev) <= tol * abs(f):
            status = STATUS_OK
            break
    for q in range(m):
        beta[idx[q]] = sb[q]
        psd[idx[q]] = ss[q]
    return f, it, status


@njit(cache=True)
def rrm_kernel(snr, ground_scale, qos_norm, tau, eligible, tol, max_iter, max_sinr):
    """Full slot RRM: association under uniform PSD, then RA/PC alternation.

    ``ground_scale = cum/(B·ΔT)`` and ``tau`` is the PC weight (``1/cum``).
    Returns ``(mask, beta, psd, reward, trace, n_iter, status)`` in normalized
    units; ``trace[k]`` is the reward after ``k`` alternations.
    """
    n = snr.shape[0]
    e0 = np.empty(n)
    c0 = np.empty(n)
    f0 = np.empty(n)
    for i in range(n):
        e0[i] = math.log2(1.0 + snr[i])
        if e0[i] > 0.0:
            c0[i] = ground_scale[i] / e0[i]
            f0[i] = qos_norm[i] / e0[i]
        else:
            c0[i] = np.inf
            f0[i] = np.inf
    trace = np.full(max_iter + 1, np.nan)
    psd = np.zeros(n)
    if max_sinr:
        mask = np.zeros(n, dtype=np.bool_)
        beta = np.zeros(n)
        best = -1
        for i in range(n):
            if eligible[i] and e0[i] > 0.0 and f0[i] <= 1.0:
                if best < 0 or snr[i] > snr[best]:
                    best = i
        if best >= 0:
            mask[best] = True
            beta[best] = 1.0
    else:
        elig = eligible.copy()
        for i in range(n):
            if not (e0[i] > 0.0):
                elig[i] = False
        mask, beta, _, _ = associate(c0, f0, elig)
    for i in range(n):
        if mask[i]:
            psd[i] = 1.0
    f, it, status = _alternate(mask, beta, psd, snr, ground_scale, qos_norm, tau, tol, max_iter, trace)
    for k in range(it + 1, max_iter + 1):
        trace[k] = f
    return mask, beta, psd, f, trace, it, status
