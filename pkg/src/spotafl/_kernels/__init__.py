"""Hot kernels: compiled Cython extension with a numpy fallback.

The compiled module is used when it was built; set ``SPOTAFL_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from spotafl._kernels import _pykernels

try:
    from spotafl._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if _ckernels is not None and not os.environ.get("SPOTAFL_PURE_PYTHON"):
    impl: ModuleType = _ckernels
    BACKEND = "cython"
else:
    impl = _pykernels
    BACKEND = "python"


def backend(name: str) -> ModuleType:
    """Return a specific backend module (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


esm_search = impl.esm_search
spa_search = impl.spa_search
xi_inner = impl.xi_inner
truncnorm_mean = impl.truncnorm_mean
