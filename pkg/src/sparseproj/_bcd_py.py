"""Pure-Python block coordinate descent kernel.

Minimizes ``u^T S u - 2 c^T u + sum_k pen_k(||u_k||)`` over contiguous groups.
This is the fallback for ``sparseproj._bcd`` and must stay line-for-line
equivalent to it; both are exercised by the test suite.

Penalty codes: ``KIND_GL`` covers the group LASSO and its adaptive version
(``pen_k(t) = thresh[k] * t``); ``KIND_SCAD`` uses the SCAD penalty with kink
``thresh[k]``. ``thresh[k] = inf`` pins group ``k`` at zero.
"""
import math

import numpy as np

KIND_GL = 0
KIND_SCAD = 1

ROOT_TOL = 1e-10
MM_MAX = 100


def _scad_deriv(t, lam, tau):
    if t <= lam:
        return lam
    return max(tau * lam - t, 0.0) / (tau - 1.0)


def _scad_pen(t, lam, tau):
    if t <= lam:
        return lam * t
    if t <= tau * lam:
        return -(t * t - 2.0 * tau * lam * t + lam * lam) / (2.0 * (tau - 1.0))
    return lam * lam * (tau + 1.0) / 2.0


def _scad_thresh(z, lam, tau, e):
    if z <= 0.0 or lam == 0.0:
        return max(z, 0.0)
    s = 2.0 * e * (tau - 1.0)
    if s > 1.0:
        if z <= lam / (2.0 * e):
            return 0.0
        if z <= lam * (1.0 + 1.0 / (2.0 * e)):
            return z - lam / (2.0 * e)
        if z <= tau * lam:
            return (s * z - tau * lam) / (s - 1.0)
        return z
    best, best_val = 0.0, e * z * z
    for c in (min(max(z - lam / (2.0 * e), 0.0), lam), lam, tau * lam, max(z, tau * lam)):
        val = e * (c - z) ** 2 + _scad_pen(c, lam, tau)
        if val < best_val:
            best, best_val = c, val
    return best


def _gl_block(b, ck, ev, V):
    nb = math.sqrt(float(b @ b))
    half = 0.5 * ck
    if nb <= half:
        return np.zeros_like(b)
    evmax = ev.max()
    evmin = ev.min()
    bt = V.T @ b
    if ck == 0.0:
        inv = np.where(ev > 1e-12 * evmax, 1.0 / np.where(ev > 0, ev, 1.0), 0.0)
        return V @ (inv * bt)
    if evmax - evmin <= 1e-12 * evmax:
        return ((nb - half) / evmax / nb) * b
    # phi(rho) = sum bt^2 / (ev rho + half)^2 - 1 is convex decreasing;
    # Newton from the lower bound increases monotonically to the root
    # the root is bracketed by [lo, hi]; rounding can push Newton outside
    lo = (nb - half) / evmax
    hi = (nb - half) / evmin if evmin > 0.0 else math.inf
    rho = lo
    bt2 = bt * bt
    for _ in range(200):
        q = ev * rho + half
        phi = float(np.sum(bt2 / (q * q))) - 1.0
        dphi = -2.0 * float(np.sum(bt2 * ev / (q * q * q)))
        if dphi == 0.0:
            break
        step = phi / dphi
        rho = min(max(rho - step, lo), hi)
        if abs(step) <= ROOT_TOL * rho:
            break
    q = ev * rho + half
    return V @ (rho * bt / q)


def _scad_block(b, uk, lam, tau, ev, A):
    evmax = ev.max()
    if evmax - ev.min() <= 1e-12 * evmax:
        nb = math.sqrt(float(b @ b))
        if nb == 0.0:
            return np.zeros_like(b)
        t = _scad_thresh(nb / evmax, lam, tau, evmax)
        return (t / nb) * b
    # majorize-minimize on the block: exact radial SCAD step on the surrogate
    L = evmax
    u = uk.copy()
    for _ in range(MM_MAX):
        v = u + (b - A @ u) / L
        nv = math.sqrt(float(v @ v))
        if nv == 0.0:
            new = np.zeros_like(v)
        else:
            new = (_scad_thresh(nv, lam, tau, L) / nv) * v
        d = new - u
        u = new
        if math.sqrt(float(d @ d)) <= 1e-13 * (1.0 + math.sqrt(float(u @ u))):
            break
    return u


def kkt_value(S, c, u, starts, sizes, thresh, kind, tau, r=None):
    """Max over groups of the first-order optimality violation."""
    if r is None:
        r = c - S @ u
    worst = 0.0
    for k in range(len(starts)):
        tk = thresh[k]
        if math.isinf(tk):
            continue
        s, e = starts[k], starts[k] + sizes[k]
        g = 2.0 * r[s:e]
        uk = u[s:e]
        nu = math.sqrt(float(uk @ uk))
        if nu == 0.0:
            viol = max(math.sqrt(float(g @ g)) - tk, 0.0)
        else:
            pd = tk if kind == KIND_GL else _scad_deriv(nu, tk, tau)
            d = g - (pd / nu) * uk
            viol = math.sqrt(float(d @ d))
        worst = max(worst, viol)
    return worst


def solve(S, c, u, starts, sizes, evals, evecs, evoff, thresh, kind, tau, tol, max_iter):
    """Run block coordinate descent in place on ``u``.

    Returns ``(sweeps, converged, kkt)``. Sweeps alternate between a full pass
    over all groups and passes over the current active set; convergence is
    declared after a full pass whose largest relative block change is below
    ``tol`` and whose KKT violation is below ``tol``.
    """
    K = len(starts)
    blocks = []
    for k in range(K):
        s, pk = int(starts[k]), int(sizes[k])
        o = int(evoff[k])
        blocks.append((s, s + pk, evals[s:s + pk], evecs[o:o + pk * pk].reshape(pk, pk),
                       S[s:s + pk, s:s + pk]))
    for k in range(K):
        if math.isinf(thresh[k]):
            u[blocks[k][0]:blocks[k][1]] = 0.0
    r = c - S @ u
    sweeps = 0
    converged = False
    kkt = math.inf
    full = True
    order = range(K)
    while sweeps < max_iter:
        maxchg = 0.0
        for k in order:
            tk = thresh[k]
            if math.isinf(tk):
                continue
            s, e, ev, V, A = blocks[k]
            uk = u[s:e]
            b = r[s:e] + A @ uk
            if kind == KIND_GL:
                new = _gl_block(b, tk, ev, V)
            else:
                new = _scad_block(b, uk, tk, tau, ev, A)
            d = new - uk
            dn = math.sqrt(float(d @ d))
            if dn > 0.0:
                r -= S[:, s:e] @ d
                u[s:e] = new
                chg = dn / (1.0 + math.sqrt(float(new @ new)))
                if chg > maxchg:
                    maxchg = chg
        sweeps += 1
        if full:
            if maxchg < tol:
                r = c - S @ u
                kkt = kkt_value(S, c, u, starts, sizes, thresh, kind, tau, r)
                if kkt < tol:
                    converged = True
                    break
            active = [k for k in range(K) if np.any(u[blocks[k][0]:blocks[k][1]])]
            if active:
                full = False
                order = active
        elif maxchg < tol:
            full = True
            order = range(K)
    if not converged:
        kkt = kkt_value(S, c, u, starts, sizes, thresh, kind, tau)
    return sweeps, converged, kkt
