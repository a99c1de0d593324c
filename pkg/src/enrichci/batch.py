"""Array-parallel solvers for acceptance regions and interval endpoints.

Whole branches of simulated trials share the truncation geometry
(``sigma1``/``sigma2`` fixed, per-replicate bounds and observations), so
the exact-test constructions are solved for all replicates at once:
damped Newton for the two moment constraints of the acceptance region and
a safeguarded false-position sweep for the test inversion in the effect
parameter. Elements that fail to converge are reported so callers can
fall back to the scalar path.
"""

import numpy as np
from scipy.special import ndtri

from ._kernels import (
    cond_cdf,
    cond_mean,
    cond_partial_moment,
    cond_pdf,
    cond_quantile,
    pooled_sd,
)


def _flat(*arrays):
    broad = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in arrays])
    shape = broad[0].shape
    return shape, [np.atleast_1d(b).ravel() for b in broad]


def batch_solve_umpu(delta0, alpha, sigma1, sigma2, lower, upper,
                     c1=None, c2=None, max_iter=60, tol=1e-10):
    """Solve the size and first-moment constraints for the acceptance region.

    Returns (c1, c2, ok). Warm starts may be passed through ``c1``/``c2``.
    """
    shape, (delta0, lower, upper) = _flat(delta0, lower, upper)
    sigma12 = pooled_sd(sigma1, sigma2)
    beta = 1.0 - alpha

    if c1 is None or c2 is None:
        c1 = cond_quantile(0.5 * alpha, delta0, sigma1, sigma2, lower, upper)
        c2 = cond_quantile(1.0 - 0.5 * alpha, delta0, sigma1, sigma2, lower, upper)
    c1 = np.array(np.broadcast_to(c1, delta0.shape), dtype=float).copy()
    c2 = np.array(np.broadcast_to(c2, delta0.shape), dtype=float).copy()

    mean = cond_mean(delta0, sigma1, sigma2, lower, upper)
    target = beta * mean
    tol1 = tol
    tol2 = tol * (sigma12 + np.abs(mean))
    max_step = 3.0 * sigma12

    active = np.ones(delta0.shape, dtype=bool)
    ok = np.zeros(delta0.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        d, lo, up = delta0[idx], lower[idx], upper[idx]
        a, b = c1[idx], c2[idx]
        fa = cond_cdf(a, d, sigma1, sigma2, lo, up)
        fb = cond_cdf(b, d, sigma1, sigma2, lo, up)
        g1 = fb - fa - beta
        g2 = cond_partial_moment(
            a, b, d, sigma1, sigma2, lo, up, cdf_a=fa, cdf_b=fb
        ) - target[idx]
        conv = (np.abs(g1) <= tol1) & (np.abs(g2) <= tol2[idx])
        pa = cond_pdf(a, d, sigma1, sigma2, lo, up)
        pb = cond_pdf(b, d, sigma1, sigma2, lo, up)
        det = pa * pb * (a - b)
        bad = ~np.isfinite(det) | (det == 0.0) | ~np.isfinite(g1) | ~np.isfinite(g2)
        det = np.where(det == 0.0, 1.0, det)
        with np.errstate(divide="ignore", invalid="ignore"):
            da = (-b * pb * g1 + pb * g2) / det
            db = (-a * pa * g1 + pa * g2) / det
        da = np.clip(da, -max_step, max_step)
        db = np.clip(db, -max_step, max_step)
        frozen = conv | bad
        a_new = np.where(frozen, a, a + da)
        b_new = np.where(frozen, b, b + db)
        # Keep the pair ordered; collapse toward the midpoint if crossed.
        crossed = a_new >= b_new
        mid = 0.5 * (a_new + b_new)
        gap = 1e-6 * sigma12
        a_new = np.where(crossed, mid - gap, a_new)
        b_new = np.where(crossed, mid + gap, b_new)

        c1[idx] = a_new
        c2[idx] = b_new
        ok[idx[conv]] = True
        active[:] = False
        active[idx[~frozen]] = True
    return c1.reshape(shape), c2.reshape(shape), ok.reshape(shape)


def _critical_value(delta, alpha, sigma1, sigma2, lower, upper, side, warm,
                    tol=1e-10):
    """C1 (side='upper') or C2 (side='lower') at ``delta``, warm-started."""
    c1, c2, ok = batch_solve_umpu(
        delta, alpha, sigma1, sigma2, lower, upper, c1=warm[0], c2=warm[1],
        tol=tol,
    )
    bad = ~ok
    if bad.any():
        # Cold restart from equal-tail quantiles for stragglers.
        c1b, c2b, ok2 = batch_solve_umpu(
            delta[bad], alpha, sigma1, sigma2, lower[bad], upper[bad], tol=tol
        )
        c1[bad], c2[bad] = c1b, c2b
        ok[bad] = ok2
    warm[0], warm[1] = c1, c2
    val = c2 if side == "lower" else c1
    return val, ok


def batch_umau_endpoint(observed, alpha, sigma1, sigma2, lower, upper, side,
                        center=None, max_iter=80, tol_scale=1.0):
    """One endpoint of the exact-test inversion, per element.

    ``side='lower'`` solves C2(delta)=observed; ``side='upper'`` solves
    C1(delta)=observed. Both critical values are strictly increasing in
    delta, so a bracketed false-position sweep (Illinois safeguard) is
    used. ``center`` seeds the initial bracket (the matching equal-tailed
    endpoint is an excellent guess); without it the bracket starts wide.
    Returns (endpoint, ok).
    """
    shape, (observed, lower, upper) = _flat(observed, lower, upper)
    sigma12 = pooled_sd(sigma1, sigma2)

    warm = [observed - 2.0 * sigma12, observed + 2.0 * sigma12]
    newton_tol = 1e-10 * tol_scale

    def h_sub(delta, idx):
        sub = [warm[0][idx], warm[1][idx]]
        val, ok = _critical_value(
            delta, alpha, sigma1, sigma2, lower[idx], upper[idx], side, sub,
            tol=newton_tol,
        )
        warm[0][idx], warm[1][idx] = sub
        return val - observed[idx], ok

    def h(delta):
        val, ok = _critical_value(
            delta, alpha, sigma1, sigma2, lower, upper, side, warm,
            tol=newton_tol,
        )
        return val - observed, ok

    if center is None:
        center = np.broadcast_to(observed, observed.shape)
        half = 10.0 * sigma12
    else:
        _, (center,) = _flat(center)
        half = 0.75 * sigma12
    all_ok = np.ones(observed.shape, dtype=bool)
    lo = center - half
    hi = center + half
    flo, ok = h(lo)
    all_ok &= ok
    step = np.full(observed.shape, 2.0 * half)
    for _ in range(7):
        idx = np.flatnonzero(flo > 0.0)
        if idx.size == 0:
            break
        lo[idx] -= step[idx]
        step[idx] *= 2.0
        flo[idx], ok = h_sub(lo[idx], idx)
        all_ok[idx] &= ok
    fhi, ok = h(hi)
    all_ok &= ok
    step = np.full(observed.shape, 2.0 * half)
    for _ in range(7):
        idx = np.flatnonzero(fhi < 0.0)
        if idx.size == 0:
            break
        hi[idx] += step[idx]
        step[idx] *= 2.0
        fhi[idx], ok = h_sub(hi[idx], idx)
        all_ok[idx] &= ok
    bracketed = (flo <= 0.0) & (fhi >= 0.0)

    last_hi = np.zeros(observed.shape, dtype=bool)
    tol = 1e-9 * sigma12 * tol_scale
    ftol = 1e-10 * sigma12 * tol_scale
    done = (np.minimum(np.abs(flo), np.abs(fhi)) <= ftol) | ((hi - lo) <= tol)
    for _ in range(max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        lo_i, hi_i, flo_i, fhi_i = lo[idx], hi[idx], flo[idx], fhi[idx]
        denom = fhi_i - flo_i
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (lo_i * fhi_i - hi_i * flo_i) / denom
        mid = 0.5 * (lo_i + hi_i)
        use_mid = ~np.isfinite(x) | (x <= lo_i) | (x >= hi_i)
        x = np.where(use_mid, mid, x)
        fx, ok = h_sub(x, idx)
        all_ok[idx] &= ok
        go_hi = fx > 0.0
        # Illinois: halve the stale ordinate on a repeated same-side move.
        flo_i = np.where(go_hi & last_hi[idx], 0.5 * flo_i, flo_i)
        fhi_i = np.where(~go_hi & ~last_hi[idx], 0.5 * fhi_i, fhi_i)
        hi_i = np.where(go_hi, x, hi_i)
        fhi_i = np.where(go_hi, fx, fhi_i)
        lo_i = np.where(~go_hi, x, lo_i)
        flo_i = np.where(~go_hi, fx, flo_i)
        lo[idx], hi[idx], flo[idx], fhi[idx] = lo_i, hi_i, flo_i, fhi_i
        last_hi[idx] = go_hi
        done[idx] = (
            (np.minimum(np.abs(flo_i), np.abs(fhi_i)) <= ftol)
            | ((hi_i - lo_i) <= tol)
        )
    root = np.where(np.abs(flo) <= np.abs(fhi), lo, hi)
    converged = bracketed & all_ok & done
    return root.reshape(shape), converged.reshape(shape)


def batch_umau_ci(observed, alpha, sigma1, sigma2, lower, upper,
                  tol_scale=1.0, seeds=None):
    # Equal-tailed endpoints are cheap and land within a fraction of a
    # pooled sd of the exact-test endpoints; use them as bracket seeds.
    if seeds is None:
        seed_lo, seed_hi, seed_ok = batch_ctost_ci(
            observed, alpha, sigma1, sigma2, lower, upper
        )
    else:
        seed_lo, seed_hi, seed_ok = seeds
    seed_lo = np.where(seed_ok, seed_lo, np.asarray(observed, dtype=float))
    seed_hi = np.where(seed_ok, seed_hi, np.asarray(observed, dtype=float))
    lo, ok_lo = batch_umau_endpoint(
        observed, alpha, sigma1, sigma2, lower, upper, side="lower",
        center=seed_lo, tol_scale=tol_scale,
    )
    hi, ok_hi = batch_umau_endpoint(
        observed, alpha, sigma1, sigma2, lower, upper, side="upper",
        center=seed_hi, tol_scale=tol_scale,
    )
    return lo, hi, ok_lo & ok_hi


def batch_ctost_ci(observed, alpha, sigma1, sigma2, lower, upper, max_iter=100):
    """Both endpoints of the two one-sided-tests inversion.

    The conditional CDF at the observed value is strictly decreasing in
    delta, so each endpoint is a bracketed bisection in delta.
    """
    shape, (observed, lower, upper) = _flat(observed, lower, upper)
    sigma12 = pooled_sd(sigma1, sigma2)

    def cdf_at(delta):
        return cond_cdf(observed, delta, sigma1, sigma2, lower, upper)

    out = []
    ok_all = np.ones(observed.shape, dtype=bool)
    for q in (1.0 - 0.5 * alpha, 0.5 * alpha):  # lower endpoint first
        lo = observed - 10.0 * sigma12
        hi = observed + 10.0 * sigma12
        for _ in range(2):
            bad = cdf_at(lo) < q  # need F large at the left edge
            if not bad.any():
                break
            lo = np.where(bad, observed - 2.0 * (observed - lo), lo)
        for _ in range(2):
            bad = cdf_at(hi) > q
            if not bad.any():
                break
            hi = np.where(bad, observed + 2.0 * (hi - observed), hi)
        ok_all &= (cdf_at(lo) >= q) & (cdf_at(hi) <= q)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            above = cdf_at(mid) > q
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.max(hi - lo) <= 1e-10 * sigma12:
                break
        out.append(0.5 * (lo + hi))
    return out[0].reshape(shape), out[1].reshape(shape), ok_all.reshape(shape)


def batch_naive_ci(observed, alpha, sigma1, sigma2):
    observed = np.asarray(observed, dtype=float)
    half = ndtri(1.0 - 0.5 * alpha) * pooled_sd(sigma1, sigma2)
    return observed - half, observed + half
