"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``CTREMBED_PURE_PYTHON=1`` to force
the numpy fallback (used by the benchmark and the backend-equivalence tests).
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CTREMBED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def compiled_module():
    """Return the compiled kernel module, or None if it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


xxh64 = _impl.xxh64
hash_tokens = _impl.hash_tokens
coalesce_rows = _impl.coalesce_rows
lazy_adam_rows = _impl.lazy_adam_rows
