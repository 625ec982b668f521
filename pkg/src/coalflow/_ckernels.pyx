# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; bit-identical twins of ``_pykernels``."""
import numpy as np

from libc.math cimport exp, floor, log, sqrt, cos, M_PI
from libc.stdint cimport int32_t, int64_t, uint32_t, uint64_t
from libc.stdlib cimport malloc, free

NAME = "cython"

cdef enum:
    MAXR = 64

cdef uint64_t M32 = 0xFFFFFFFFULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0, c1, c2, c3
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + <uint32_t>0x9E3779B9
            k1 = k1 + <uint32_t>0xBB67AE85
        p0 = <uint64_t>0xD2511F53 * <uint64_t>c[0]
        p1 = <uint64_t>0xCD9E8D57 * <uint64_t>c[2]
        c0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        c1 = <uint32_t>(p1 & M32)
        c2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        c3 = <uint32_t>(p0 & M32)
        c[0] = c0
        c[1] = c1
        c[2] = c2
        c[3] = c3


cdef inline void _draw(uint32_t* w, int64_t a, int64_t s, uint32_t purpose,
                       uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t ua = <uint64_t>a
    cdef uint64_t us = <uint64_t>s
    w[0] = <uint32_t>(ua & M32)
    w[1] = <uint32_t>((ua >> 32) & M32)
    w[2] = <uint32_t>(us & M32)
    w[3] = <uint32_t>((us >> 32) & 0xFFFFFF) | (purpose << 24)
    _philox(w, k0, k1)


cdef inline double _u53(uint32_t hi, uint32_t lo) noexcept nogil:
    return <double>(((<uint64_t>hi << 32) | <uint64_t>lo) >> 11) * INV_2_53


cdef struct Model:
    int kind
    int radius
    int nj
    const uint64_t* thr
    const double* jvals
    double half
    uint32_t k0
    uint32_t k1


cdef inline double _jump(Model* md, int64_t j, int64_t s) noexcept nogil:
    cdef uint32_t w[4]
    cdef int t, lane
    cdef double u
    if md.kind == 0:
        _draw(w, j >> 2, s, 0, md.k0, md.k1)
        t = 0
        while <uint64_t>w[j & 3] >= md.thr[t]:
            t += 1
        return md.jvals[t]
    _draw(w, j >> 1, s, 0, md.k0, md.k1)
    lane = <int>(j & 1)
    u = _u53(w[2 * lane], w[2 * lane + 1])
    return md.half * (2.0 * u - 1.0)


cdef inline double _offset(Model* md, int64_t s) noexcept nogil:
    cdef uint32_t w[4]
    if md.kind == 0:
        return 0.0
    _draw(w, 0, s, 1, md.k0, md.k1)
    return _u53(w[0], w[1])


cdef inline double _cell_value(Model* md, int64_t s, int64_t k, double off) noexcept nogil:
    # consecutive sites share a Philox block; draw each block once
    cdef double props[2 * MAXR + 1]
    cdef uint32_t w[4]
    cdef int n = 2 * md.radius + 1
    cdef int i, q, t, lane
    cdef int64_t j, blk, cur = 0
    cdef bint have = 0
    cdef int shift = 2 if md.kind == 0 else 1
    cdef double v, xi
    for i in range(n):
        j = k - md.radius + i
        blk = j >> shift
        if not have or blk != cur:
            _draw(w, blk, s, 0, md.k0, md.k1)
            cur = blk
            have = 1
        if md.kind == 0:
            t = 0
            while <uint64_t>w[j & 3] >= md.thr[t]:
                t += 1
            v = <double>j + md.jvals[t]
        else:
            lane = <int>(j & 1)
            xi = md.half * (2.0 * _u53(w[2 * lane], w[2 * lane + 1]) - 1.0)
            v = ((<double>j + off) + 0.5) + xi
        q = i
        while q > 0 and props[q - 1] > v:
            props[q] = props[q - 1]
            q -= 1
        props[q] = v
    return props[md.radius]


cdef Model _model(int kind, int radius, const uint64_t[::1] thr, const double[::1] jvals,
                  double half, key) except *:
    cdef Model md
    if radius > MAXR:
        raise ValueError("sort radius too large for compiled kernel")
    md.kind = kind
    md.radius = radius
    md.nj = jvals.shape[0]
    md.thr = &thr[0]
    md.jvals = &jvals[0]
    md.half = half
    md.k0 = <uint32_t>int(key[0])
    md.k1 = <uint32_t>int(key[1])
    return md


def _as_thr(thr):
    return np.ascontiguousarray(thr, dtype=np.uint64)


def _as_jv(jvals):
    return np.ascontiguousarray(jvals, dtype=np.float64)


def philox4x32(ctr, key):
    """Philox4x32-10 block function, vectorised over rows of ``ctr``."""
    cdef uint32_t[:, ::1] c = np.ascontiguousarray(np.asarray(ctr, dtype=np.uint32).reshape(-1, 4)).copy()
    cdef uint32_t k0 = <uint32_t>int(key[0])
    cdef uint32_t k1 = <uint32_t>int(key[1])
    cdef Py_ssize_t i
    with nogil:
        for i in range(c.shape[0]):
            _philox(&c[i, 0], k0, k1)
    return np.asarray(c)


def map_eval(int kind, int radius, thr, jvals, double half, key, steps, x):
    """Value of the step-``steps[i]`` map at ``x[i]``."""
    thr_a = _as_thr(thr)
    jv_a = _as_jv(jvals)
    cdef Model md = _model(kind, radius, thr_a, jv_a, half, key)
    cdef const int64_t[::1] st = np.ascontiguousarray(steps, dtype=np.int64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double off
    cdef int64_t k
    with nogil:
        for i in range(xv.shape[0]):
            off = _offset(&md, st[i])
            k = <int64_t>floor(xv[i] - off)
            o[i] = _cell_value(&md, st[i], k, off)
    return out


def cell_values(int kind, int radius, thr, jvals, double half, key, int64_t step,
                int64_t k0, Py_ssize_t ncell):
    """Cell offset and values of cells ``k0 .. k0 + ncell - 1`` at one step."""
    thr_a = _as_thr(thr)
    jv_a = _as_jv(jvals)
    cdef Model md = _model(kind, radius, thr_a, jv_a, half, key)
    out = np.empty(ncell, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double off
    with nogil:
        off = _offset(&md, step)
        for i in range(ncell):
            o[i] = _cell_value(&md, step, k0 + i, off)
    return off, out


def push_points(int kind, int radius, thr, jvals, double half, key, double[::1] x,
                int64_t step0, int64_t nsteps, record, bint stop_merged):
    """Push sorted points ``x`` (in place) through ``nsteps`` successive maps."""
    thr_a = _as_thr(thr)
    jv_a = _as_jv(jvals)
    cdef Model md = _model(kind, radius, thr_a, jv_a, half, key)
    cdef Py_ssize_t m = x.shape[0]
    cdef double[:, :] rec
    cdef bint has_rec = record is not None
    if has_rec:
        rec = record
    cdef Py_ssize_t i
    cdef int64_t t, s, k, prev_k = 0
    cdef double off, xi, y, prev_x = 0.0, prev_y = 0.0
    cdef int64_t done = nsteps
    with nogil:
        if has_rec:
            for i in range(m):
                rec[i, 0] = x[i]
        for t in range(nsteps):
            s = step0 + t
            off = _offset(&md, s)
            for i in range(m):
                xi = x[i]
                if i > 0 and xi == prev_x:
                    y = prev_y
                else:
                    k = <int64_t>floor(xi - off)
                    if i > 0 and k == prev_k:
                        y = prev_y
                    else:
                        y = _cell_value(&md, s, k, off)
                    prev_k = k
                prev_x = xi
                prev_y = y
                x[i] = y
            if has_rec:
                for i in range(m):
                    rec[i, t + 1] = x[i]
            if stop_merged and m > 1 and x[0] == x[m - 1]:
                done = t + 1
                break
    return done


cdef inline double _normal(uint32_t k0, uint32_t k1, int64_t l, int64_t t) noexcept nogil:
    cdef uint32_t w[4]
    cdef double u1, u2
    _draw(w, l, t, 2, k0, k1)
    u1 = <double>((((<uint64_t>w[0] << 32) | <uint64_t>w[1]) >> 11) + 1) * INV_2_53
    u2 = _u53(w[2], w[3])
    return sqrt(-2.0 * log(u1)) * cos((2.0 * M_PI) * u2)


cdef inline double _bridge_u(uint32_t k0, uint32_t k1, int64_t b, int64_t t) noexcept nogil:
    cdef uint32_t w[4]
    _draw(w, b, t, 3, k0, k1)
    return _u53(w[0], w[1])


def std_normal(key, idx, steps):
    """The Gaussian increment that the CBM kernel uses for particle ``idx`` at ``steps``."""
    cdef uint32_t k0 = <uint32_t>int(key[0])
    cdef uint32_t k1 = <uint32_t>int(key[1])
    cdef const int64_t[::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef const int64_t[::1] sv = np.ascontiguousarray(steps, dtype=np.int64)
    out = np.empty(iv.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(iv.shape[0]):
            o[i] = _normal(k0, k1, iv[i], sv[i])
    return out


cdef Py_ssize_t _merge(Py_ssize_t nc, int64_t* cs, int64_t* ce, int64_t* cl, double* cp,
                       char* ch, char* flag, const int32_t* rank) noexcept nogil:
    # in-place left compaction; write index never overtakes read index
    cdef Py_ssize_t c = 0, j = 0
    cdef int64_t s, e, ld
    cdef double p
    cdef char changed
    while c < nc:
        s = cs[c]
        e = ce[c]
        ld = cl[c]
        p = cp[c]
        changed = ch[c]
        while c < nc - 1 and flag[c]:
            c += 1
            e = ce[c]
            changed = 1
            if rank[cl[c]] < rank[ld]:
                ld = cl[c]
                p = cp[c]
        cs[j] = s
        ce[j] = e
        cl[j] = ld
        cp[j] = p
        ch[j] = changed
        j += 1
        c += 1
    return j


def cbm_collide(const double[::1] starts, rank, raw, key, int64_t nsteps, double dt,
                bint bridge, bridge_u, out_pos, out_lead, int64_t[::1] merge_step,
                double[::1] final_pos, int32_t[::1] final_lead, bint stop_single,
                int64_t linger=-1):
    """Collision-rule fold over a time grid; see ``cbm.collide`` for semantics."""
    cdef const int32_t[::1] rk = np.ascontiguousarray(rank, dtype=np.int32)
    cdef Py_ssize_t m = starts.shape[0]
    cdef uint32_t k0 = <uint32_t>int(key[0])
    cdef uint32_t k1 = <uint32_t>int(key[1])
    cdef bint has_raw = raw is not None
    cdef bint has_bu = bridge_u is not None
    cdef bint has_rec = out_pos is not None
    cdef const double[:, :] rw
    cdef const double[:, :] bu
    cdef double[:, :] op
    cdef int32_t[:, :] ol
    if has_raw:
        rw = raw
    if has_bu:
        bu = bridge_u
    if has_rec:
        op = out_pos
        ol = out_lead
    cdef double sqdt = sqrt(dt)
    cdef double* rawpos = <double*>malloc(m * sizeof(double))
    cdef double* cp = <double*>malloc(m * sizeof(double))
    cdef double* newp = <double*>malloc(m * sizeof(double))
    cdef int64_t* lead = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* cs = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* ce = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* cl = <int64_t*>malloc(m * sizeof(int64_t))
    cdef char* ch = <char*>malloc(m * sizeof(char))
    cdef char* flag = <char*>malloc(m * sizeof(char))
    if (rawpos == NULL or cp == NULL or newp == NULL or lead == NULL or cs == NULL
            or ce == NULL or cl == NULL or ch == NULL or flag == NULL):
        raise MemoryError()
    cdef Py_ssize_t i, j, q, b, c, nc = 0
    cdef int64_t t, best, l, done = nsteps, first = -1
    cdef Py_ssize_t nc0
    cdef double g0, g1, p, u
    cdef bint anyflag
    with nogil:
        for i in range(m):
            rawpos[i] = starts[i]
        i = 0
        while i < m:
            j = i
            while j + 1 < m and starts[j + 1] == starts[i]:
                j += 1
            best = i
            for q in range(i, j + 1):
                if rk[q] < rk[best]:
                    best = q
            cs[nc] = i
            ce[nc] = j
            cl[nc] = best
            nc += 1
            i = j + 1
        for b in range(m - 1):
            merge_step[b] = -1
        for c in range(nc):
            for q in range(cs[c], ce[c] + 1):
                lead[q] = cl[c]
            for b in range(cs[c], ce[c]):
                merge_step[b] = 0
            cp[c] = rawpos[cl[c]]
        if has_rec:
            for c in range(nc):
                for q in range(cs[c], ce[c] + 1):
                    op[q, 0] = cp[c]
                    ol[q, 0] = <int32_t>cl[c]
        if nc < m:
            first = 0
        for t in range(nsteps):
            nc0 = nc
            for c in range(nc):
                l = cl[c]
                if has_raw:
                    rawpos[l] = rw[l, t + 1]
                else:
                    rawpos[l] = rawpos[l] + sqdt * _normal(k0, k1, l, t)
                newp[c] = rawpos[l]
            for c in range(nc - 1):
                if newp[c] >= newp[c + 1]:
                    flag[c] = 1
                elif bridge:
                    g0 = cp[c + 1] - cp[c]
                    g1 = newp[c + 1] - newp[c]
                    p = exp(-(g0 * g1) / dt)
                    b = ce[c]
                    if has_bu:
                        u = bu[t, b]
                    else:
                        u = _bridge_u(k0, k1, b, t)
                    flag[c] = u < p
                else:
                    flag[c] = 0
            for c in range(nc):
                ch[c] = 0
            while True:
                nc = _merge(nc, cs, ce, cl, newp, ch, flag, &rk[0])
                anyflag = False
                for c in range(nc - 1):
                    flag[c] = newp[c] >= newp[c + 1]
                    if flag[c]:
                        anyflag = True
                if not anyflag:
                    break
            for c in range(nc):
                if ch[c]:
                    for q in range(cs[c], ce[c] + 1):
                        lead[q] = cl[c]
                    for b in range(cs[c], ce[c]):
                        if merge_step[b] < 0:
                            merge_step[b] = t + 1
                cp[c] = newp[c]
            if has_rec:
                for c in range(nc):
                    for q in range(cs[c], ce[c] + 1):
                        op[q, t + 1] = cp[c]
                        ol[q, t + 1] = <int32_t>cl[c]
            if first < 0 and nc < nc0:
                first = t + 1
            if (stop_single and nc == 1) or (0 <= linger and 0 <= first and first + linger <= t + 1):
                done = t + 1
                break
        for c in range(nc):
            for q in range(cs[c], ce[c] + 1):
                final_pos[q] = cp[c]
                final_lead[q] = <int32_t>lead[q]
    free(rawpos)
    free(cp)
    free(newp)
    free(lead)
    free(cs)
    free(ce)
    free(cl)
    free(ch)
    free(flag)
    return done
