"""Pure-Python/numpy versions of the hot kernels.

Each function mirrors the compiled one in ``_ckernels.pyx``. The two
search kernels follow the same operation order, so both backends return
bit-identical schedules; sums run in device-index order. The quadrature
kernel agrees to rounding only.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr

_CHUNK_BITS = 16


def _scalar_feasible(n_up, max_p, jam_b, jam_e, n_total, d, sigma_b, sigma_e,
                     two_kappa, eps, g2, upsilon, count_all):
    if n_up == 0:
        return False
    if two_kappa * max_p / math.sqrt(jam_b / d + sigma_b) > eps:
        return False
    k = n_total if count_all else n_up
    denom = float(k * k) * (max_p * max_p)
    if denom == 0.0:
        return True
    return g2 / denom * (jam_e / d + sigma_e) >= upsilon


def _psi(n_total, jam_b, d, sigma_b, h_sum):
    if h_sum == 0.0:
        return math.inf
    return (n_total * jam_b + d * sigma_b) / (h_sum * h_sum)


def esm_search(p_b, q_b, q_e, d, sigma_b, sigma_e, kappa, eps, g2, upsilon, count_all):
    """Exhaustive search over all 2**N role vectors.

    Device ``i`` maps to bit ``N-1-i`` so that numeric mask order equals
    lexicographic order of the binary vector. Returns
    ``(mask, psi, n_feasible)``; ``mask`` is -1 when nothing is feasible.
    """
    p_b = np.asarray(p_b, dtype=float)
    q_b = np.asarray(q_b, dtype=float)
    q_e = np.asarray(q_e, dtype=float)
    n = p_b.shape[0]
    two_kappa = 2.0 * kappa
    best_mask, best_psi, best_cnt, n_feasible = -1, math.inf, -1, 0
    total = 1 << n
    chunk = 1 << min(_CHUNK_BITS, n)
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        h_sum = np.zeros(masks.shape)
        jam_b = np.zeros(masks.shape)
        jam_e = np.zeros(masks.shape)
        max_p = np.zeros(masks.shape)
        cnt = np.zeros(masks.shape, dtype=np.int64)
        for i in range(n):
            bit = ((masks >> (n - 1 - i)) & 1).astype(bool)
            h_sum = np.where(bit, h_sum + p_b[i], h_sum)
            max_p = np.where(bit, np.maximum(max_p, p_b[i]), max_p)
            jam_b = np.where(bit, jam_b, jam_b + q_b[i])
            jam_e = np.where(bit, jam_e, jam_e + q_e[i])
            cnt += bit
        with np.errstate(divide="ignore", invalid="ignore"):
            private = two_kappa * max_p / np.sqrt(jam_b / d + sigma_b) <= eps
            k = np.full(masks.shape, n, dtype=np.int64) if count_all else cnt
            denom = (k * k).astype(float) * (max_p * max_p)
            secure = np.where(denom == 0.0, True, g2 / denom * (jam_e / d + sigma_e) >= upsilon)
            psi = np.where(h_sum == 0.0, np.inf, (n * jam_b + d * sigma_b) / (h_sum * h_sum))
        ok = private & secure & (cnt > 0)
        n_feasible += int(ok.sum())
        if not ok.any():
            continue
        idx = np.flatnonzero(ok)
        cand_psi = psi[idx]
        low = cand_psi.min()
        tied = idx[cand_psi == low]
        top = tied[cnt[tied] == cnt[tied].max()][0]
        c_psi, c_cnt = float(psi[top]), int(cnt[top])
        if c_psi < best_psi or (c_psi == best_psi and c_cnt > best_cnt) or best_mask < 0:
            best_mask, best_psi, best_cnt = int(masks[top]), c_psi, c_cnt
    return best_mask, best_psi, n_feasible


def spa_search(order, p_b, q_b, q_e, d, sigma_b, sigma_e, kappa, eps, g2, upsilon, count_all):
    """BnB-style greedy passes over devices sorted by ascending ``p_b``.

    ``order`` lists device indices in ascending-``p_b`` order. Returns
    ``(a, psi)`` with ``a`` a 0/1 int array in original device order.
    """
    order = [int(i) for i in order]
    p = [float(x) for x in p_b]
    qb = [float(x) for x in q_b]
    qe = [float(x) for x in q_e]
    n = len(p)
    two_kappa = 2.0 * kappa
    total_b = 0.0
    total_e = 0.0
    for i in range(n):
        total_b += qb[i]
        total_e += qe[i]

    best_a = [0] * n
    best_psi = math.inf
    for it in range(n):
        a = [0] * n
        h_sum, jam_b, jam_e, max_p, n_up = 0.0, total_b, total_e, 0.0, 0
        for pos in range(it, n):
            idx = order[pos]
            new_h = h_sum + p[idx]
            new_jb = jam_b - qb[idx]
            new_je = jam_e - qe[idx]
            new_max = p[idx] if p[idx] > max_p else max_p
            if _scalar_feasible(n_up + 1, new_max, new_jb, new_je, n, d, sigma_b, sigma_e,
                                two_kappa, eps, g2, upsilon, count_all):
                a[idx] = 1
                h_sum, jam_b, jam_e, max_p, n_up = new_h, new_jb, new_je, new_max, n_up + 1
        psi = _psi(n, jam_b, d, sigma_b, h_sum) if n_up else math.inf
        if psi <= best_psi:
            best_psi = psi
            best_a = a
    return np.array(best_a, dtype=np.int64), best_psi


def _log_phi(x):
    return -0.5 * x * x - 0.5 * math.log(2.0 * math.pi)


def truncnorm_mean(lo, hi):
    """Mean of a standard normal truncated to ``[lo, hi]`` (vectorized)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = lo + hi > 0.0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    log_cb = log_ndtr(b)
    log_ca = log_ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        num = np.expm1(0.5 * (b - a) * (b + a))
        den = -np.expm1(log_ca - log_cb)
        mills = np.exp(_log_phi(b) - log_cb)
        mean = mills * num / den
    # collapsed mass: the conditional mean sits on the endpoint nearest zero
    bad = ~np.isfinite(mean) | (den <= 0.0) | ~np.isfinite(log_cb)
    mean = np.where(bad, b, mean)
    return np.where(flip, -mean, mean)


def xi_inner(u, t, nodes, weights):
    """Inner integral over the observation for each prior value in ``u``.

    ``nodes``/``weights`` are a quadrature rule on the observation axis.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(nodes, dtype=float)
    w = np.asarray(weights, dtype=float)
    post_mean = v + truncnorm_mean(-v, t - v)
    diff = post_mean[None, :] - u[:, None]
    dens = np.exp(_log_phi(u[:, None] - v[None, :]))
    return (diff * diff * dens) @ w
