# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled block coordinate descent kernel.

Same algorithm and signature as ``sparseproj._bcd_py``; see that module for
the problem statement. The sweep loop runs without the GIL so draws can be
projected from several threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY, isinf

cnp.import_array()

cdef double ROOT_TOL = 1e-10
cdef int MM_MAX = 100

KIND_GL = 0
KIND_SCAD = 1


cdef inline double _scad_deriv(double t, double lam, double tau) noexcept nogil:
    if t <= lam:
        return lam
    cdef double v = tau * lam - t
    if v < 0.0:
        v = 0.0
    return v / (tau - 1.0)


cdef inline double _scad_pen(double t, double lam, double tau) noexcept nogil:
    if t <= lam:
        return lam * t
    if t <= tau * lam:
        return -(t * t - 2.0 * tau * lam * t + lam * lam) / (2.0 * (tau - 1.0))
    return lam * lam * (tau + 1.0) / 2.0


cdef double _scad_thresh(double z, double lam, double tau, double e) noexcept nogil:
    cdef double s, best, best_val, val, c
    cdef double cands[4]
    cdef int i
    if z <= 0.0 or lam == 0.0:
        return z if z > 0.0 else 0.0
    s = 2.0 * e * (tau - 1.0)
    if s > 1.0:
        if z <= lam / (2.0 * e):
            return 0.0
        if z <= lam * (1.0 + 1.0 / (2.0 * e)):
            return z - lam / (2.0 * e)
        if z <= tau * lam:
            return (s * z - tau * lam) / (s - 1.0)
        return z
    c = z - lam / (2.0 * e)
    if c < 0.0:
        c = 0.0
    if c > lam:
        c = lam
    cands[0] = c
    cands[1] = lam
    cands[2] = tau * lam
    cands[3] = z if z > tau * lam else tau * lam
    best = 0.0
    best_val = e * z * z
    for i in range(4):
        val = e * (cands[i] - z) * (cands[i] - z) + _scad_pen(cands[i], lam, tau)
        if val < best_val:
            best = cands[i]
            best_val = val
    return best


cdef void _gl_block(const double* b, int pk, double ck, const double* ev, const double* V,
                    double* out, double* bt) noexcept nogil:
    cdef int i, j, it
    cdef double nb = 0.0, half = 0.5 * ck, evmax, evmin, rho, phi, dphi, q, step, acc, lo, hi
    for i in range(pk):
        nb += b[i] * b[i]
    nb = sqrt(nb)
    if nb <= half:
        for i in range(pk):
            out[i] = 0.0
        return
    evmax = ev[0]
    evmin = ev[0]
    for i in range(1, pk):
        if ev[i] > evmax:
            evmax = ev[i]
        if ev[i] < evmin:
            evmin = ev[i]
    # bt = V^T b, V row-major with eigenvectors in columns
    for j in range(pk):
        acc = 0.0
        for i in range(pk):
            acc += V[i * pk + j] * b[i]
        bt[j] = acc
    if ck == 0.0:
        for j in range(pk):
            if ev[j] > 1e-12 * evmax and ev[j] > 0.0:
                bt[j] = bt[j] / ev[j]
            else:
                bt[j] = 0.0
    elif evmax - evmin <= 1e-12 * evmax:
        rho = (nb - half) / evmax / nb
        for i in range(pk):
            out[i] = rho * b[i]
        return
    else:
        # the root is bracketed by [lo, hi]; rounding can push Newton outside
        lo = (nb - half) / evmax
        hi = (nb - half) / evmin if evmin > 0.0 else INFINITY
        rho = lo
        for it in range(200):
            phi = -1.0
            dphi = 0.0
            for j in range(pk):
                q = ev[j] * rho + half
                phi += bt[j] * bt[j] / (q * q)
                dphi -= 2.0 * bt[j] * bt[j] * ev[j] / (q * q * q)
            if dphi == 0.0:
                break
            step = phi / dphi
            rho -= step
            if rho < lo:
                rho = lo
            elif rho > hi:
                rho = hi
            if fabs(step) <= ROOT_TOL * rho:
                break
        for j in range(pk):
            bt[j] = rho * bt[j] / (ev[j] * rho + half)
    for i in range(pk):
        acc = 0.0
        for j in range(pk):
            acc += V[i * pk + j] * bt[j]
        out[i] = acc


cdef void _scad_block(const double* b, const double* uk, int pk, double lam, double tau,
                      const double* ev, const double[:, ::1] S, int s0,
                      double* out, double* v) noexcept nogil:
    cdef int i, j, it
    cdef double evmax = ev[0], evmin = ev[0], nb = 0.0, t, nv, acc, dn, un
    for i in range(1, pk):
        if ev[i] > evmax:
            evmax = ev[i]
        if ev[i] < evmin:
            evmin = ev[i]
    if evmax - evmin <= 1e-12 * evmax:
        for i in range(pk):
            nb += b[i] * b[i]
        nb = sqrt(nb)
        if nb == 0.0:
            for i in range(pk):
                out[i] = 0.0
            return
        t = _scad_thresh(nb / evmax, lam, tau, evmax)
        for i in range(pk):
            out[i] = (t / nb) * b[i]
        return
    for i in range(pk):
        out[i] = uk[i]
    for it in range(MM_MAX):
        nv = 0.0
        for i in range(pk):
            acc = 0.0
            for j in range(pk):
                acc += S[s0 + i, s0 + j] * out[j]
            v[i] = out[i] + (b[i] - acc) / evmax
            nv += v[i] * v[i]
        nv = sqrt(nv)
        if nv == 0.0:
            t = 0.0
        else:
            t = _scad_thresh(nv, lam, tau, evmax) / nv
        dn = 0.0
        un = 0.0
        for i in range(pk):
            acc = t * v[i]
            dn += (acc - out[i]) * (acc - out[i])
            un += acc * acc
            out[i] = acc
        if sqrt(dn) <= 1e-13 * (1.0 + sqrt(un)):
            break


cdef double _kkt(const double[:, ::1] S, const double[::1] c, const double[::1] u,
                 const long[::1] starts, const long[::1] sizes, const double[::1] thresh,
                 int kind, double tau, double* r) noexcept nogil:
    cdef Py_ssize_t p = c.shape[0], K = starts.shape[0], i, j, k, s, pk
    cdef double acc, worst = 0.0, viol, nu, ng, pd, d
    for i in range(p):
        acc = c[i]
        for j in range(p):
            acc -= S[i, j] * u[j]
        r[i] = acc
    for k in range(K):
        if isinf(thresh[k]):
            continue
        s = starts[k]
        pk = sizes[k]
        nu = 0.0
        for i in range(pk):
            nu += u[s + i] * u[s + i]
        nu = sqrt(nu)
        if nu == 0.0:
            ng = 0.0
            for i in range(pk):
                ng += 4.0 * r[s + i] * r[s + i]
            viol = sqrt(ng) - thresh[k]
            if viol < 0.0:
                viol = 0.0
        else:
            if kind == 0:
                pd = thresh[k]
            else:
                pd = _scad_deriv(nu, thresh[k], tau)
            viol = 0.0
            for i in range(pk):
                d = 2.0 * r[s + i] - pd * u[s + i] / nu
                viol += d * d
            viol = sqrt(viol)
        if viol > worst:
            worst = viol
    return worst


def kkt_value(S, c, u, starts, sizes, thresh, kind, tau, r=None):
    """Max over groups of the first-order optimality violation."""
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef long[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef double[::1] th = np.ascontiguousarray(thresh, dtype=np.float64)
    cdef double[::1] rv = np.empty(cv.shape[0])
    return _kkt(Sv, cv, uv, st, sz, th, kind, tau, &rv[0])


def solve(S, c, u, starts, sizes, evals, evecs, evoff, thresh, int kind, double tau,
          double tol, long max_iter):
    """Run block coordinate descent in place on ``u``; returns ``(sweeps, converged, kkt)``."""
    cdef const double[:, ::1] Sv = S
    cdef const double[::1] cv = c
    cdef double[::1] uv = u
    cdef const long[::1] st = starts
    cdef const long[::1] sz = sizes
    cdef const double[::1] evv = evals
    cdef const double[::1] vecs = evecs
    cdef const long[::1] voff = evoff
    cdef const double[::1] th = thresh
    cdef Py_ssize_t p = cv.shape[0], K = st.shape[0]
    cdef Py_ssize_t i, j, k, s, pk, n_order, ki
    cdef long sweeps = 0
    cdef bint converged = False, full = True, nz
    cdef double kkt = INFINITY, maxchg, dn, un, chg, acc
    cdef int pmax = 1
    for k in range(K):
        if sz[k] > pmax:
            pmax = sz[k]
    cdef double[::1] r = np.empty(p)
    cdef double[::1] b = np.empty(pmax)
    cdef double[::1] new = np.empty(pmax)
    cdef double[::1] w1 = np.empty(pmax)
    cdef long[::1] order = np.arange(K, dtype=np.int64)

    with nogil:
        for k in range(K):
            if isinf(th[k]):
                for i in range(sz[k]):
                    uv[st[k] + i] = 0.0
        for i in range(p):
            acc = cv[i]
            for j in range(p):
                acc -= Sv[i, j] * uv[j]
            r[i] = acc
        n_order = K
        while sweeps < max_iter:
            maxchg = 0.0
            for ki in range(n_order):
                k = order[ki]
                if isinf(th[k]):
                    continue
                s = st[k]
                pk = sz[k]
                for i in range(pk):
                    acc = r[s + i]
                    for j in range(pk):
                        acc += Sv[s + i, s + j] * uv[s + j]
                    b[i] = acc
                if kind == 0:
                    _gl_block(&b[0], <int>pk, th[k], &evv[s], &vecs[voff[k]], &new[0], &w1[0])
                else:
                    _scad_block(&b[0], &uv[s], <int>pk, th[k], tau, &evv[s], Sv, <int>s,
                                &new[0], &w1[0])
                dn = 0.0
                un = 0.0
                for i in range(pk):
                    w1[i] = new[i] - uv[s + i]
                    dn += w1[i] * w1[i]
                    un += new[i] * new[i]
                if dn > 0.0:
                    for i in range(p):
                        acc = 0.0
                        for j in range(pk):
                            acc += Sv[i, s + j] * w1[j]
                        r[i] -= acc
                    for i in range(pk):
                        uv[s + i] = new[i]
                    chg = sqrt(dn) / (1.0 + sqrt(un))
                    if chg > maxchg:
                        maxchg = chg
            sweeps += 1
            if full:
                if maxchg < tol:
                    kkt = _kkt(Sv, cv, uv, st, sz, th, kind, tau, &r[0])
                    if kkt < tol:
                        converged = True
                        break
                n_order = 0
                for k in range(K):
                    nz = False
                    for i in range(sz[k]):
                        if uv[st[k] + i] != 0.0:
                            nz = True
                            break
                    if nz:
                        order[n_order] = k
                        n_order += 1
                if n_order > 0:
                    full = False
                else:
                    n_order = K
                    for k in range(K):
                        order[k] = k
            elif maxchg < tol:
                full = True
                n_order = K
                for k in range(K):
                    order[k] = k
        if not converged:
            kkt = _kkt(Sv, cv, uv, st, sz, th, kind, tau, &r[0])
    return sweeps, converged, kkt
