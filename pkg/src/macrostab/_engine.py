"""Compiled event loops for the coupled Harris dynamics.

All state lives in numpy arrays so the loops can stop and resume at any point
(buffer refill, box growth, log flush) without changing the trajectory.
Uniform rows are consumed in the order (wait, origin, displacement, mark).
"""
import math

import numpy as np
from numba import njit

DONE = 0
NEED_RNG = 1
NEED_GROW = 2
EMPTY = 3
NEED_LOG = 4
NEED_AUX = 5
STEPPED = 6

MAX_TAIL_K = 1 << 40


@njit(cache=True)
def sample_disp(u, zs, cdf, tp):
    """Inverse CDF over the support in ascending order (see JumpKernel.sampler_arrays)."""
    qn = tp[0]
    if u < qn:
        x = math.log(u / qn) / math.log(tp[1])
        if x > MAX_TAIL_K:
            k = MAX_TAIL_K
        else:
            k = int(math.ceil(x)) - 1
            if k < 0:
                k = 0
        return -(int(tp[2]) + k)
    n = zs.shape[0]
    if n > 0:
        i = np.searchsorted(cdf, u, side="right")
        if i < n:
            return zs[i]
    qp = tp[3]
    if qp > 0.0:
        top = cdf[n - 1] if n > 0 else qn
        v = (u - top) / qp
        if v < 0.0:
            v = 0.0
        if v >= 1.0:
            v = 1.0 - 1e-16
        x = math.log1p(-v) / math.log(tp[4])
        k = MAX_TAIL_K if x > MAX_TAIL_K else int(math.floor(x))
        return int(tp[5]) + k
    # rounding at the top of the CDF
    return zs[n - 1]


@njit(cache=True)
def apply_move(occ, xi, yi, u, bmax, b, K, moved):
    """Basic coupling: copy c moves x->y iff u*bmax < b(eta_c(x), eta_c(y))."""
    n = 0
    for c in range(occ.shape[0]):
        ex = occ[c, xi]
        ey = occ[c, yi]
        if ex >= 1 and ey <= K - 1 and u * bmax < b[ex, ey]:
            occ[c, xi] = ex - 1
            occ[c, yi] = ey + 1
            moved[c] = 1
            n += 1
        else:
            moved[c] = 0
    return n


@njit(cache=True)
def window_update(occ, xi, yi, window, wpos, wsize):
    """Keep the origin window equal to the union of occupied sites (remove x first, then add y)."""
    C = occ.shape[0]
    empty = True
    for c in range(C):
        if occ[c, xi] > 0:
            empty = False
            break
    if empty and wpos[xi] >= 0:
        k = wpos[xi]
        last = window[wsize - 1]
        window[k] = last
        wpos[last] = k
        wpos[xi] = -1
        wsize -= 1
    if wpos[yi] < 0:
        window[wsize] = yi
        wpos[yi] = wsize
        wsize += 1
    return wsize


@njit(cache=True)
def run_events(occ, ring, lo, window, wpos, st, b, bmax, K, zs, cdf, tp,
               buf, t_end, max_events, restrict, check_order, log, info, moved, counts):
    """Advance the coupled copies until t_end, max_events events, or a resource request.

    st = [t_last, pos, wsize, log_pos] (float64); restrict = [active, a, b, n] (box indices);
    counts = [events, moving events, order violations].
    """
    B = occ.shape[1]
    C = occ.shape[0]
    t_last = st[0]
    pos = int(st[1])
    wsize = int(st[2])
    log_pos = int(st[3])
    done = 0
    status = DONE
    while True:
        if done >= max_events:
            status = STEPPED
            break
        if wsize == 0:
            status = EMPTY
            break
        if pos >= buf.shape[0]:
            status = NEED_RNG
            break
        if log.shape[0] > 0 and log_pos >= log.shape[0]:
            status = NEED_LOG
            break
        lam = bmax * wsize
        t_next = t_last - math.log1p(-buf[pos, 0]) / lam
        if t_next > t_end:
            status = DONE
            break
        k = int(buf[pos, 1] * wsize)
        if k >= wsize:
            k = wsize - 1
        xi = window[k]
        z = sample_disp(buf[pos, 2], zs, cdf, tp)
        u = buf[pos, 3]
        yi = xi + z
        skip = False
        if ring:
            yi = yi % B
        elif yi < 0 or yi >= B:
            if restrict[0] != 0:
                skip = True
            else:
                status = NEED_GROW
                break
        if restrict[0] != 0 and not skip:
            if abs(z) > restrict[3] or yi < restrict[1] or yi > restrict[2]:
                skip = True
        pos += 1
        t_last = t_next
        done += 1
        counts[0] += 1
        nm = 0
        if skip:
            for c in range(C):
                moved[c] = 0
        else:
            nm = apply_move(occ, xi, yi, u, bmax, b, K, moved)
            if nm > 0:
                counts[1] += 1
                if not ring:
                    wsize = window_update(occ, xi, yi, window, wpos, wsize)
                if check_order >= 0:
                    for c in range(check_order, C - 1):
                        if occ[c, xi] > occ[c + 1, xi] or occ[c, yi] > occ[c + 1, yi]:
                            counts[2] += 1
        info[0] = t_next
        info[1] = xi + lo
        info[2] = (xi + z) + lo
        info[3] = u
        info[4] = 1.0 if skip else 0.0
        if log.shape[0] > 0:
            log[log_pos, 0] = t_next
            log[log_pos, 1] = xi + lo
            log[log_pos, 2] = (yi + lo) if not skip else (xi + z + lo)
            log[log_pos, 3] = u
            mask = 0
            for c in range(C):
                if moved[c]:
                    mask |= 1 << c
            log[log_pos, 4] = mask
            log_pos += 1
    st[0] = t_last
    st[1] = pos
    st[2] = wsize
    st[3] = log_pos
    return status


@njit(cache=True)
def _site_current(eta, S, w, b, zj, wj):
    """Sum over z of z p(z) b(eta(w), eta(w+z)) on a ring."""
    ew = eta[w]
    if ew == 0:
        return 0.0
    s = 0.0
    for k in range(zj.shape[0]):
        s += zj[k] * wj[k] * b[ew, eta[(w + zj[k]) % S]]
    return s


@njit(cache=True)
def _local_current(eta, S, xi, yi, b, zj, wj, stamp, epoch):
    """Sum of site currents over every site whose term depends on eta(x) or eta(y)."""
    s = 0.0
    for base in (xi, yi):
        if stamp[base] != epoch:
            stamp[base] = epoch
            s += _site_current(eta, S, base, b, zj, wj)
        for k in range(zj.shape[0]):
            w = (base - zj[k]) % S
            if stamp[w] != epoch:
                stamp[w] = epoch
                s += _site_current(eta, S, w, b, zj, wj)
    return s


@njit(cache=True)
def ring_current(eta, b, zj, wj):
    S = eta.shape[0]
    s = 0.0
    for w in range(S):
        s += _site_current(eta, S, w, b, zj, wj)
    return s


@njit(cache=True)
def run_ring_flux(occ, b, bmax, K, zs, cdf, tp, zj, wj, buf, st, t_end, edges, acc, stamp):
    """Single-copy ring run integrating the instantaneous current over time batches.

    st = [t_last, pos, J, epoch, clock]; acc[i] accumulates the integral of J/S over
    [edges[i], edges[i+1]).  Integration covers [clock, min(next event, t_end)].
    """
    S = occ.shape[1]
    moved = np.zeros(1, dtype=np.int64)
    t_last = st[0]
    pos = int(st[1])
    J = st[2]
    epoch = int(st[3])
    clock = st[4]
    nb = edges.shape[0] - 1
    status = DONE
    lam = bmax * S
    eta = occ[0]
    while True:
        if pos >= buf.shape[0]:
            status = NEED_RNG
            break
        t_next = t_last - math.log1p(-buf[pos, 0]) / lam
        upto = t_next if t_next < t_end else t_end
        # integrate J over [clock, upto)
        if upto > clock:
            a = clock
            while a < upto:
                i = np.searchsorted(edges, a, side="right") - 1
                if i >= nb:
                    break
                if i < 0:
                    nxt = edges[0]
                    if nxt > upto:
                        nxt = upto
                    a = nxt
                    continue
                e = edges[i + 1]
                if e > upto:
                    e = upto
                acc[i] += (e - a) * J / S
                a = e
            clock = upto
        if t_next > t_end:
            status = DONE
            break
        k = int(buf[pos, 1] * S)
        if k >= S:
            k = S - 1
        z = sample_disp(buf[pos, 2], zs, cdf, tp)
        u = buf[pos, 3]
        yi = (k + z) % S
        pos += 1
        t_last = t_next
        ex = eta[k]
        ey = eta[yi]
        if ex >= 1 and ey <= K - 1 and u * bmax < b[ex, ey]:
            epoch += 1
            before = _local_current(eta, S, k, yi, b, zj, wj, stamp, epoch)
            apply_move(occ, k, yi, u, bmax, b, K, moved)
            epoch += 1
            after = _local_current(eta, S, k, yi, b, zj, wj, stamp, epoch)
            J += after - before
    st[0] = t_last
    st[1] = pos
    st[2] = J
    st[3] = epoch
    st[4] = clock
    return status


@njit(cache=True)
def _occupied_any(occ, idx):
    if idx < 0 or idx >= occ.shape[1]:
        return False
    for c in range(occ.shape[0]):
        if occ[c, idx] > 0:
            return True
    return False


@njit(cache=True)
def _cross_update(LR, zmin, zmax):
    """Boundary-walk rule: L jumps past a pair straddling it, R likewise from the right."""
    if zmin < LR[0] and LR[0] <= zmax:
        LR[0] = zmax + 1
    if zmin <= LR[1] and LR[1] < zmax:
        LR[1] = zmin - 1


@njit(cache=True)
def run_propagation(occ, lo, window, wpos, st, b, bmax, K, zs, cdf, tp,
                    buf, aux, sizes, size_cdf, pos_frac, rate, LR, t_end, counts):
    """Coupled pair plus the boundary walks L, R driven by every Harris event that straddles them.

    Events at unoccupied origins are not produced by the particle sampler; they are added
    as phantom crossing candidates (rate `rate` per boundary, size-biased |z|, uniform offset)
    and kept only when the origin is empty in every copy.
    st = [t_last, pos, wsize, aux_pos, tL, tR]; counts = [events, phantoms, inside violations].
    """
    B = occ.shape[1]
    C = occ.shape[0]
    moved = np.zeros(C, dtype=np.int64)
    t_last = st[0]
    pos = int(st[1])
    wsize = int(st[2])
    apos = int(st[3])
    status = DONE
    while True:
        # phantom clocks are drawn lazily: a negative time means "needs a draw"
        for side in range(2):
            if st[4 + side] < 0.0:
                if apos >= aux.shape[0]:
                    status = NEED_AUX
                    break
                st[4 + side] = -st[4 + side] - 1.0 - math.log1p(-aux[apos, 0]) / rate
                apos += 1
        if status == NEED_AUX:
            break
        if pos >= buf.shape[0]:
            status = NEED_RNG
            break
        if wsize > 0:
            t_next = t_last - math.log1p(-buf[pos, 0]) / (bmax * wsize)
        else:
            t_next = np.inf
        tL = st[4]
        tR = st[5]
        if tL <= tR and tL < t_next:
            side = 0
            tp_ = tL
        elif tR < tL and tR < t_next:
            side = 1
            tp_ = tR
        else:
            side = -1
            tp_ = t_next
        if tp_ > t_end:
            status = DONE
            break
        if side >= 0:
            if apos >= aux.shape[0]:
                status = NEED_AUX
                break
            u1 = aux[apos, 1]
            u2 = aux[apos, 2]
            u3 = aux[apos, 3]
            apos += 1
            j = np.searchsorted(size_cdf, u1, side="right")
            if j >= sizes.shape[0]:
                j = sizes.shape[0] - 1
            i = sizes[j]
            off = int(u2 * i)
            if off >= i:
                off = i - 1
            if side == 0:
                zmin = LR[0] - 1 - off
            else:
                zmax_ = LR[1] + 1 + off
                zmin = zmax_ - i
            zmax = zmin + i
            origin = zmin if u3 < pos_frac[j] else zmax
            if not _occupied_any(occ, origin - lo):
                counts[1] += 1
                _cross_update(LR, zmin, zmax)
            # mark this clock for a fresh draw starting at tp_
            st[4 + side] = -tp_ - 1.0
            continue
        k = int(buf[pos, 1] * wsize)
        if k >= wsize:
            k = wsize - 1
        xi = window[k]
        z = sample_disp(buf[pos, 2], zs, cdf, tp)
        yi = xi + z
        if yi < 0 or yi >= B:
            status = NEED_GROW
            break
        u = buf[pos, 3]
        pos += 1
        t_last = t_next
        counts[0] += 1
        xs = xi + lo
        ys = yi + lo
        _cross_update(LR, min(xs, ys), max(xs, ys))
        nm = apply_move(occ, xi, yi, u, bmax, b, K, moved)
        if nm > 0:
            wsize = window_update(occ, xi, yi, window, wpos, wsize)
            for sidx in (xi, yi):
                s = sidx + lo
                if LR[0] <= s and s <= LR[1]:
                    for c in range(C - 1):
                        if occ[c, sidx] != occ[c + 1, sidx]:
                            counts[2] += 1
    st[0] = t_last
    st[1] = pos
    st[2] = wsize
    st[3] = apos
    return status
