"""Kernel selection: the compiled extension when importable, else NumPy.

Set ``NQKV_PURE_PYTHON=1`` to force the fallback.
"""

import os

from nqkv import _pykernels as pure

compiled = None
if not os.environ.get("NQKV_PURE_PYTHON"):
    try:
        from nqkv import _ckernels as compiled
    except ImportError:
        compiled = None

kernels = compiled if compiled is not None else pure
BACKEND = "cython" if compiled is not None else "python"
