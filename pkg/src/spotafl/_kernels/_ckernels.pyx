# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Operation order matches ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, expm1, erfc, INFINITY, isfinite, M_PI

cnp.import_array()

cdef double _LOG_SQRT_2PI = 0.5 * log(2.0 * M_PI)
cdef double _INV_SQRT2 = 0.7071067811865476


cdef inline bint _feasible(long n_up, double max_p, double jam_b, double jam_e, long n_total,
                           double d, double sigma_b, double sigma_e, double two_kappa,
                           double eps, double g2, double upsilon, bint count_all) nogil:
    cdef long k
    cdef double denom
    if n_up == 0:
        return False
    if two_kappa * max_p / sqrt(jam_b / d + sigma_b) > eps:
        return False
    k = n_total if count_all else n_up
    denom = <double>(k * k) * (max_p * max_p)
    if denom == 0.0:
        return True
    return g2 / denom * (jam_e / d + sigma_e) >= upsilon


def esm_search(p_b, q_b, q_e, double d, double sigma_b, double sigma_e, double kappa,
               double eps, double g2, double upsilon, bint count_all):
    cdef double[::1] p = np.ascontiguousarray(p_b, dtype=np.float64)
    cdef double[::1] qb = np.ascontiguousarray(q_b, dtype=np.float64)
    cdef double[::1] qe = np.ascontiguousarray(q_e, dtype=np.float64)
    cdef long n = p.shape[0]
    cdef long long total = (<long long>1) << n
    cdef long long mask, best_mask = -1
    cdef long i, cnt, best_cnt = -1, n_feasible = 0
    cdef double h_sum, jam_b, jam_e, max_p, psi, best_psi = INFINITY
    cdef double two_kappa = 2.0 * kappa
    with nogil:
        for mask in range(total):
            h_sum = 0.0
            jam_b = 0.0
            jam_e = 0.0
            max_p = 0.0
            cnt = 0
            for i in range(n):
                if (mask >> (n - 1 - i)) & 1:
                    h_sum = h_sum + p[i]
                    if p[i] > max_p:
                        max_p = p[i]
                    cnt += 1
                else:
                    jam_b = jam_b + qb[i]
                    jam_e = jam_e + qe[i]
            if not _feasible(cnt, max_p, jam_b, jam_e, n, d, sigma_b, sigma_e,
                             two_kappa, eps, g2, upsilon, count_all):
                continue
            n_feasible += 1
            if h_sum == 0.0:
                psi = INFINITY
            else:
                psi = (n * jam_b + d * sigma_b) / (h_sum * h_sum)
            if best_mask < 0 or psi < best_psi or (psi == best_psi and cnt > best_cnt):
                best_mask = mask
                best_psi = psi
                best_cnt = cnt
    return best_mask, best_psi, n_feasible


def spa_search(order, p_b, q_b, q_e, double d, double sigma_b, double sigma_e, double kappa,
               double eps, double g2, double upsilon, bint count_all):
    cdef long[::1] ordv = np.ascontiguousarray(order, dtype=np.int_)
    cdef double[::1] p = np.ascontiguousarray(p_b, dtype=np.float64)
    cdef double[::1] qb = np.ascontiguousarray(q_b, dtype=np.float64)
    cdef double[::1] qe = np.ascontiguousarray(q_e, dtype=np.float64)
    cdef long n = p.shape[0]
    a_np = np.zeros(n, dtype=np.int64)
    best_np = np.zeros(n, dtype=np.int64)
    cdef long long[::1] a = a_np
    cdef long long[::1] best_a = best_np
    cdef long it, pos, idx, i, n_up
    cdef double total_b = 0.0, total_e = 0.0
    cdef double h_sum, jam_b, jam_e, max_p, new_h, new_jb, new_je, new_max, psi
    cdef double best_psi = INFINITY
    cdef double two_kappa = 2.0 * kappa
    with nogil:
        for i in range(n):
            total_b = total_b + qb[i]
            total_e = total_e + qe[i]
        for it in range(n):
            for i in range(n):
                a[i] = 0
            h_sum = 0.0
            jam_b = total_b
            jam_e = total_e
            max_p = 0.0
            n_up = 0
            for pos in range(it, n):
                idx = ordv[pos]
                new_h = h_sum + p[idx]
                new_jb = jam_b - qb[idx]
                new_je = jam_e - qe[idx]
                new_max = p[idx] if p[idx] > max_p else max_p
                if _feasible(n_up + 1, new_max, new_jb, new_je, n, d, sigma_b, sigma_e,
                             two_kappa, eps, g2, upsilon, count_all):
                    a[idx] = 1
                    h_sum = new_h
                    jam_b = new_jb
                    jam_e = new_je
                    max_p = new_max
                    n_up += 1
            if n_up == 0 or h_sum == 0.0:
                psi = INFINITY
            else:
                psi = (n * jam_b + d * sigma_b) / (h_sum * h_sum)
            if psi <= best_psi:
                best_psi = psi
                for i in range(n):
                    best_a[i] = a[i]
    return best_np, best_psi


cdef inline double _log_ndtr(double x) nogil:
    cdef double r
    if x > -30.0:
        return log(0.5 * erfc(-x * _INV_SQRT2))
    # erfc underflows further out; use the asymptotic Mills-ratio series
    r = 1.0 / (x * x)
    return (-0.5 * x * x - _LOG_SQRT_2PI - log(-x)
            + log(1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * (105.0 - r * 945.0))))))


cdef inline double _truncnorm_mean(double lo, double hi) nogil:
    cdef bint flip = lo + hi > 0.0
    cdef double a, b, log_cb, log_ca, num, den, mean
    if flip:
        a = -hi
        b = -lo
    else:
        a = lo
        b = hi
    log_cb = _log_ndtr(b)
    log_ca = _log_ndtr(a)
    num = expm1(0.5 * (b - a) * (b + a))
    den = -expm1(log_ca - log_cb)
    mean = exp(-0.5 * b * b - _LOG_SQRT_2PI - log_cb) * num / den
    if not isfinite(mean) or den <= 0.0 or not isfinite(log_cb):
        mean = b
    return -mean if flip else mean


def truncnorm_mean(lo, hi):
    lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    hi_a = np.broadcast_to(np.asarray(hi, dtype=np.float64), lo_a.shape).copy()
    out = np.empty_like(lo_a)
    cdef double[::1] lv = lo_a.reshape(-1)
    cdef double[::1] hv = hi_a.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(lv.shape[0]):
            ov[i] = _truncnorm_mean(lv[i], hv[i])
    return out


def xi_inner(u, double t, nodes, weights):
    cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    cdef double[::1] v = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nu = uv.shape[0], nv = v.shape[0], i, j
    post_np = np.empty(nv, dtype=np.float64)
    out_np = np.empty(nu, dtype=np.float64)
    cdef double[::1] post = post_np
    cdef double[::1] out = out_np
    cdef double acc, diff, z
    with nogil:
        for j in range(nv):
            post[j] = v[j] + _truncnorm_mean(-v[j], t - v[j])
        for i in range(nu):
            acc = 0.0
            for j in range(nv):
                diff = post[j] - uv[i]
                z = uv[i] - v[j]
                acc = acc + diff * diff * exp(-0.5 * z * z - _LOG_SQRT_2PI) * w[j]
            out[i] = acc
    return out_np
