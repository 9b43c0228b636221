"""Hot numeric inner loops with a numba fast path and a pure-numpy fallback.

The Monte Carlo estimator verification draws hundreds of thousands of
micro-batch trials; its per-trial reduction is the package's hot loop. Both
paths consume the same pre-drawn standard normals, so they compute the same
estimator up to summation order (agreement to ~1e-13 relative).

Path selection: numba is used when importable, unless the environment
variable PREDGRAD_PURE_NUMPY is set to a non-empty value other than
"0"/"false". Callers can also force a path per call.

Per-trial math, for draws zg, zw ~ N(0, I):
    u = su * zg                (centered true gradient, E||u||^2 = sigma_g^2)
    v = coef * u + sw * zw     (centered prediction, matching sigma_h, tau)
    G = mean(g_control) + (1-f) * (mean(h_pred) - mean(h_control))
where g = mu + u and h = mu_h + v, the control block being the leading m_c
examples of each trial.
"""

import os

import numpy as np

_flag = os.environ.get("PREDGRAD_PURE_NUMPY", "").strip().lower()
PURE_NUMPY_REQUESTED = _flag not in ("", "0", "false")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not PURE_NUMPY_REQUESTED


def mc_chunk_numpy(zg, zw, mu, mu_h, su, coef, sw, m_c, one_minus_f):
    """Vectorized reduction of one chunk of trials.

    Returns (sum of G over trials, sum of ||G - mu||^2 over trials).
    """
    zg_c = zg[:, :m_c, :].mean(axis=1)
    zw_c = zw[:, :m_c, :].mean(axis=1)
    zg_p = zg[:, m_c:, :].mean(axis=1)
    zw_p = zw[:, m_c:, :].mean(axis=1)
    g_c = mu + su * zg_c
    h_c = mu_h + coef * su * zg_c + sw * zw_c
    h_p = mu_h + coef * su * zg_p + sw * zw_p
    est = g_c + one_minus_f * (h_p - h_c)
    err = est - mu
    return est.sum(axis=0), float(np.einsum("ij,ij->", err, err))


def _mc_chunk_loops(zg, zw, mu, mu_h, su, coef, sw, m_c, one_minus_f):
    n_trials, m, dim = zg.shape
    sum_est = np.zeros(dim)
    sum_sq = 0.0
    for t in range(n_trials):
        zg_c = np.zeros(dim)
        zw_c = np.zeros(dim)
        zg_p = np.zeros(dim)
        zw_p = np.zeros(dim)
        for j in range(m_c):
            for k in range(dim):
                zg_c[k] += zg[t, j, k]
                zw_c[k] += zw[t, j, k]
        for j in range(m_c, m):
            for k in range(dim):
                zg_p[k] += zg[t, j, k]
                zw_p[k] += zw[t, j, k]
        m_p = m - m_c
        for k in range(dim):
            gc = mu[k] + su * zg_c[k] / m_c
            hc = mu_h[k] + coef * su * zg_c[k] / m_c + sw * zw_c[k] / m_c
            hp = mu_h[k] + coef * su * zg_p[k] / m_p + sw * zw_p[k] / m_p
            est = gc + one_minus_f * (hp - hc)
            err = est - mu[k]
            sum_est[k] += est
            sum_sq += err * err
    return sum_est, sum_sq


if HAVE_NUMBA:
    mc_chunk_numba = njit(cache=True)(_mc_chunk_loops)
else:
    mc_chunk_numba = None


def mc_chunk(zg, zw, mu, mu_h, su, coef, sw, m_c, one_minus_f, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and mc_chunk_numba is not None:
        return mc_chunk_numba(zg, zw, mu, mu_h, float(su), float(coef),
                              float(sw), int(m_c), float(one_minus_f))
    return mc_chunk_numpy(zg, zw, mu, mu_h, su, coef, sw, m_c, one_minus_f)
