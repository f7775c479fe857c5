"""Pick the kernel implementation at import.

The compiled extension is used when it was built; setting
``FCTL_BACKEND=python`` forces the numpy fallback.
"""

import os

from . import _kernels_py

python_kernels = _kernels_py

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if os.environ.get("FCTL_BACKEND", "").lower() == "python" or compiled_kernels is None:
    kernels = _kernels_py
    name = "python"
else:
    kernels = compiled_kernels
    name = "cython"


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["cython"] if compiled_kernels is not None else [])


def get(backend=None):
    if backend is None:
        return kernels
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if compiled_kernels is None:
            raise RuntimeError("compiled kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown backend {backend!r}")
