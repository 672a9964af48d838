import math

import numpy as np
import pytest

from spotafl import _kernels
from spotafl._kernels import _pykernels

BACKENDS = _kernels.available()


def kernel_args(rng, n, d=100, count_all=False):
    p = rng.rayleigh(1.0, n) * math.sqrt(5)
    q = rng.rayleigh(1.0, n) * math.sqrt(5)
    return (p, p * p, q * q, d, 1.0, 1.0, math.sqrt(2 * math.log(25)), 12.0, 100.0, 1.5, count_all)


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert _kernels.BACKEND in BACKENDS


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(20))
def test_backends_agree_bit_for_bit(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    args = kernel_args(rng, n, d=int(rng.choice([1, 10, 1000])), count_all=bool(seed % 2))
    c, py = _kernels.backend("cython"), _kernels.backend("python")
    assert c.esm_search(*args) == py.esm_search(*args)
    order = np.argsort(args[0], kind="stable")
    a_c, psi_c = c.spa_search(order, *args)
    a_p, psi_p = py.spa_search(order, *args)
    assert a_c.tolist() == a_p.tolist() and psi_c == psi_p


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
def test_quadrature_kernels_agree():
    c, py = _kernels.backend("cython"), _kernels.backend("python")
    lo = np.linspace(-40, 30, 301)
    hi = lo + np.linspace(0.0, 12, 301)
    assert np.allclose(c.truncnorm_mean(lo, hi), py.truncnorm_mean(lo, hi), atol=1e-10)
    nodes, weights = np.polynomial.legendre.leggauss(16)
    u = np.linspace(0, 3, 7)
    assert np.allclose(c.xi_inner(u, 3.0, nodes * 8 + 1.5, weights * 8), py.xi_inner(u, 3.0, nodes * 8 + 1.5, weights * 8),
                       rtol=1e-10, atol=1e-14)


def test_truncnorm_mean_against_scipy():
    from scipy.stats import truncnorm

    rng = np.random.default_rng(3)
    lo = rng.uniform(-12, 8, 500)
    hi = lo + rng.uniform(0.01, 10, 500)
    assert np.allclose(_pykernels.truncnorm_mean(lo, hi), truncnorm.mean(lo, hi), atol=1e-9)


def test_truncnorm_mean_far_tail_collapses_to_endpoint():
    out = _pykernels.truncnorm_mean(np.array([60.0, -80.0]), np.array([61.0, -79.0]))
    assert out[0] == pytest.approx(60.0, abs=0.02) and out[1] == pytest.approx(-79.0, abs=0.02)


def test_esm_count_matches_enumeration():
    rng = np.random.default_rng(1)
    args = kernel_args(rng, 6)
    mask, psi, n_feasible = _pykernels.esm_search(*args)
    assert 0 <= n_feasible <= 2**6 - 1
    assert (mask < 0) == (n_feasible == 0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.backend("fortran")
