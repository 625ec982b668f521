"""Pure-Python reference kernels.

Every routine here has a twin in ``_ckernels.pyx`` with the same signature and
bit-identical results. This module is the fallback when the compiled extension
is unavailable and the oracle the compiled code is tested against.

Random numbers are drawn from Philox4x32-10 evaluated at explicit counters, so
a map at step ``s`` is a random field that can be queried lazily at any cell.
Counter layout: ``(a_lo, a_hi, s_lo, s_hi | purpose << 24)`` where ``a`` is a
cell block or particle index and ``s`` the time step.
"""
import math

import numpy as np

M32 = 0xFFFFFFFF
PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85

PURPOSE_JUMP = 0
PURPOSE_OFFSET = 1
PURPOSE_NORMAL = 2
PURPOSE_BRIDGE = 3

KIND_LATTICE = 0
KIND_CONTINUOUS = 1

TWO_PI = 2.0 * math.pi
INV_2_53 = 1.0 / 9007199254740992.0

NAME = "python"


def _philox(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r:
            k0 = (k0 + PHILOX_W0) & M32
            k1 = (k1 + PHILOX_W1) & M32
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = (p1 >> 32) ^ c1 ^ k0, p1 & M32, (p0 >> 32) ^ c3 ^ k1, p0 & M32
    return c0, c1, c2, c3


def _draw(a, s, purpose, key):
    return _philox(a & M32, (a >> 32) & M32, s & M32,
                   ((s >> 32) & 0xFFFFFF) | (purpose << 24), key[0], key[1])


def _u53(hi, lo):
    return (((hi << 32) | lo) >> 11) * INV_2_53


def philox4x32(ctr, key):
    """Philox4x32-10 block function, vectorised over rows of ``ctr``."""
    ctr = np.asarray(ctr, dtype=np.uint32).reshape(-1, 4)
    c = [ctr[:, i].astype(np.uint64) for i in range(4)]
    k0 = np.uint64(int(key[0]))
    k1 = np.uint64(int(key[1]))
    m32 = np.uint64(M32)
    s32 = np.uint64(32)
    for r in range(10):
        if r:
            k0 = (k0 + np.uint64(PHILOX_W0)) & m32
            k1 = (k1 + np.uint64(PHILOX_W1)) & m32
        p0 = np.uint64(PHILOX_M0) * c[0]
        p1 = np.uint64(PHILOX_M1) * c[2]
        c = [(p1 >> s32) ^ c[1] ^ k0, p1 & m32, (p0 >> s32) ^ c[3] ^ k1, p0 & m32]
    return np.stack(c, axis=1).astype(np.uint32)


def _jump(kind, j, s, thr, jvals, half, key):
    if kind == KIND_LATTICE:
        w = _draw(j >> 2, s, PURPOSE_JUMP, key)[j & 3]
        t = 0
        while w >= thr[t]:
            t += 1
        return float(jvals[t])
    w = _draw(j >> 1, s, PURPOSE_JUMP, key)
    lane = j & 1
    u = _u53(w[2 * lane], w[2 * lane + 1])
    return half * (2.0 * u - 1.0)


def _offset(kind, s, key):
    if kind == KIND_LATTICE:
        return 0.0
    w = _draw(0, s, PURPOSE_OFFSET, key)
    return _u53(w[0], w[1])


def _cell_value(kind, radius, thr, jvals, half, key, s, k, off):
    props = []
    for j in range(k - radius, k + radius + 1):
        xi = _jump(kind, j, s, thr, jvals, half, key)
        if kind == KIND_LATTICE:
            props.append(float(j) + xi)
        else:
            props.append(((float(j) + off) + 0.5) + xi)
    props.sort()
    return props[radius]


def _thr_list(thr):
    return [int(t) for t in thr]


def _draw_vec(a, s, purpose, key):
    """Vectorised ``_draw`` over int64 arrays ``a`` and ``s``."""
    au = np.asarray(a, dtype=np.int64).view(np.uint64)
    su = np.asarray(s, dtype=np.int64).view(np.uint64)
    m32 = np.uint64(M32)
    ctr = np.empty(au.shape + (4,), dtype=np.uint32)
    ctr[..., 0] = au & m32
    ctr[..., 1] = (au >> np.uint64(32)) & m32
    ctr[..., 2] = su & m32
    ctr[..., 3] = ((su >> np.uint64(32)) & np.uint64(0xFFFFFF)) | np.uint64(purpose << 24)
    return philox4x32(ctr.reshape(-1, 4), key).reshape(au.shape + (4,)).astype(np.uint64)


def _u53_vec(hi, lo):
    return (((hi << np.uint64(32)) | lo) >> np.uint64(11)).astype(np.float64) * INV_2_53


def _offset_vec(kind, s, key):
    s = np.asarray(s, dtype=np.int64)
    if kind == KIND_LATTICE:
        return np.zeros(s.shape, dtype=np.float64)
    w = _draw_vec(np.zeros_like(s), s, PURPOSE_OFFSET, key)
    return _u53_vec(w[..., 0], w[..., 1])


def _cell_values_vec(kind, radius, thr, jvals, half, key, s, k, off):
    """Values of cells ``k`` at steps ``s`` (arrays of equal length)."""
    s = np.asarray(s, dtype=np.int64)[:, None]
    j = np.asarray(k, dtype=np.int64)[:, None] + np.arange(-radius, radius + 1, dtype=np.int64)[None, :]
    s = np.broadcast_to(s, j.shape)
    if kind == KIND_LATTICE:
        w = _draw_vec(j >> 2, s, PURPOSE_JUMP, key)
        lane = (j & 3)[..., None]
        wj = np.take_along_axis(w, lane, axis=-1)[..., 0]
        t = np.searchsorted(np.asarray(thr, dtype=np.uint64), wj, side="right")
        props = j.astype(np.float64) + np.asarray(jvals, dtype=np.float64)[t]
    else:
        w = _draw_vec(j >> 1, s, PURPOSE_JUMP, key)
        lane = (j & 1)[..., None]
        hi = np.take_along_axis(w, 2 * lane, axis=-1)[..., 0]
        lo = np.take_along_axis(w, 2 * lane + 1, axis=-1)[..., 0]
        xi = half * (2.0 * _u53_vec(hi, lo) - 1.0)
        props = ((j.astype(np.float64) + np.asarray(off, dtype=np.float64)[:, None]) + 0.5) + xi
    props.sort(axis=1)
    return props[:, radius]


def map_eval(kind, radius, thr, jvals, half, key, steps, x):
    """Value of the step-``steps[i]`` map at ``x[i]``."""
    key = (int(key[0]), int(key[1]))
    steps = np.asarray(steps, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    off = _offset_vec(kind, steps, key)
    k = np.floor(x - off).astype(np.int64)
    return _cell_values_vec(kind, radius, thr, jvals, half, key, steps, k, off)


def cell_values(kind, radius, thr, jvals, half, key, step, k0, ncell):
    """Cell offset and values of cells ``k0 .. k0 + ncell - 1`` at one step."""
    key = (int(key[0]), int(key[1]))
    off = float(_offset_vec(kind, np.array([step]), key)[0])
    s = np.full(ncell, int(step), dtype=np.int64)
    k = int(k0) + np.arange(ncell, dtype=np.int64)
    return off, _cell_values_vec(kind, radius, thr, jvals, half, key, s, k, np.full(ncell, off))


def push_points(kind, radius, thr, jvals, half, key, x, step0, nsteps, record, stop_merged):
    """Push sorted points ``x`` (in place) through ``nsteps`` successive maps."""
    key = (int(key[0]), int(key[1]))
    m = x.shape[0]
    if record is not None:
        record[:, 0] = x
    for t in range(nsteps):
        s = int(step0) + t
        off = float(_offset_vec(kind, np.array([s]), key)[0])
        k = np.floor(x - off).astype(np.int64)
        uk, inv = np.unique(k, return_inverse=True)
        vals = _cell_values_vec(kind, radius, thr, jvals, half, key,
                                np.full(uk.shape[0], s, dtype=np.int64), uk, np.full(uk.shape[0], off))
        x[:] = vals[inv.reshape(-1)]
        if record is not None:
            record[:, t + 1] = x
        if stop_merged and m > 1 and x[0] == x[m - 1]:
            return t + 1
    return nsteps


def std_normal(key, idx, steps):
    """The Gaussian increment that the CBM kernel uses for particle ``idx`` at ``steps``."""
    key = (int(key[0]), int(key[1]))
    out = np.empty(len(idx), dtype=np.float64)
    for i in range(len(idx)):
        out[i] = _normal(key, int(idx[i]), int(steps[i]))
    return out


def _normal(key, l, t):
    w = _draw(l, t, PURPOSE_NORMAL, key)
    u1 = ((((w[0] << 32) | w[1]) >> 11) + 1) * INV_2_53
    u2 = _u53(w[2], w[3])
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def _bridge_u(key, b, t):
    w = _draw(b, t, PURPOSE_BRIDGE, key)
    return _u53(w[0], w[1])


def _merge(cs, ce, cl, cp, ch, flag, rank):
    ns, ne, nl, npos, nch = [], [], [], [], []
    nc = len(cs)
    c = 0
    while c < nc:
        s, e, lead, p, changed = cs[c], ce[c], cl[c], cp[c], ch[c]
        while c < nc - 1 and flag[c]:
            c += 1
            e = ce[c]
            changed = True
            if rank[cl[c]] < rank[lead]:
                lead = cl[c]
                p = cp[c]
        ns.append(s)
        ne.append(e)
        nl.append(lead)
        npos.append(p)
        nch.append(changed)
        c += 1
    return ns, ne, nl, npos, nch


def cbm_collide(starts, rank, raw, key, nsteps, dt, bridge, bridge_u,
                out_pos, out_lead, merge_step, final_pos, final_lead, stop_single, linger=-1):
    """Collision-rule fold over a time grid; see ``cbm.collide`` for semantics.

    With ``linger >= 0`` the fold stops ``linger`` steps after the first merge.
    """
    key = (int(key[0]), int(key[1]))
    m = starts.shape[0]
    rank = [int(r) for r in rank]
    sqdt = math.sqrt(dt)
    rawpos = [float(v) for v in starts]
    lead = [0] * m
    cs, ce, cl = [], [], []
    i = 0
    while i < m:
        j = i
        while j + 1 < m and starts[j + 1] == starts[i]:
            j += 1
        best = i
        for q in range(i, j + 1):
            if rank[q] < rank[best]:
                best = q
        cs.append(i)
        ce.append(j)
        cl.append(best)
        i = j + 1
    for b in range(m - 1):
        merge_step[b] = -1
    for c in range(len(cs)):
        for q in range(cs[c], ce[c] + 1):
            lead[q] = cl[c]
        for b in range(cs[c], ce[c]):
            merge_step[b] = 0
    cp = [rawpos[l] for l in cl]
    if out_pos is not None:
        for c in range(len(cs)):
            for q in range(cs[c], ce[c] + 1):
                out_pos[q, 0] = cp[c]
                out_lead[q, 0] = cl[c]
    done = nsteps
    first = 0 if len(cs) < m else -1
    for t in range(nsteps):
        nc = len(cs)
        newp = []
        for c in range(nc):
            l = cl[c]
            if raw is not None:
                rawpos[l] = float(raw[l, t + 1])
            else:
                rawpos[l] = rawpos[l] + sqdt * _normal(key, l, t)
            newp.append(rawpos[l])
        flag = []
        for c in range(nc - 1):
            if newp[c] >= newp[c + 1]:
                flag.append(True)
            elif bridge:
                g0 = cp[c + 1] - cp[c]
                g1 = newp[c + 1] - newp[c]
                p = math.exp(-(g0 * g1) / dt)
                b = ce[c]
                u = float(bridge_u[t, b]) if bridge_u is not None else _bridge_u(key, b, t)
                flag.append(u < p)
            else:
                flag.append(False)
        ch = [False] * nc
        while True:
            cs, ce, cl, newp, ch = _merge(cs, ce, cl, newp, ch, flag, rank)
            flag = [newp[c] >= newp[c + 1] for c in range(len(cs) - 1)]
            if not any(flag):
                break
        for c in range(len(cs)):
            if ch[c]:
                for q in range(cs[c], ce[c] + 1):
                    lead[q] = cl[c]
                for b in range(cs[c], ce[c]):
                    if merge_step[b] < 0:
                        merge_step[b] = t + 1
        cp = newp
        if out_pos is not None:
            for c in range(len(cs)):
                for q in range(cs[c], ce[c] + 1):
                    out_pos[q, t + 1] = cp[c]
                    out_lead[q, t + 1] = cl[c]
        if first < 0 and len(cs) < nc:
            first = t + 1
        if (stop_single and len(cs) == 1) or (0 <= linger and 0 <= first and first + linger <= t + 1):
            done = t + 1
            break
    for c in range(len(cs)):
        for q in range(cs[c], ce[c] + 1):
            final_pos[q] = cp[c]
            final_lead[q] = lead[q]
    return done
