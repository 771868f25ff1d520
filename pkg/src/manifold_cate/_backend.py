"""Pick the compiled partition kernel when it is importable.

Set ``MANIFOLD_CATE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _partition_py

try:
    from . import _partition as _compiled
except ImportError:
    _compiled = None

python_accumulate_weights = _partition_py.accumulate_weights
compiled_accumulate_weights = None if _compiled is None else _compiled.accumulate_weights

_forced = os.environ.get("MANIFOLD_CATE_PURE_PYTHON", "") not in ("", "0")
if compiled_accumulate_weights is not None and not _forced:
    accumulate_weights = compiled_accumulate_weights
    BACKEND = "cython"
else:
    accumulate_weights = python_accumulate_weights
    BACKEND = "python"
