"""Device hot-kernel backend selection.

Prefers the compiled extension, falls back to the numpy implementation.
Set MEMSOC_NO_EXT=1 to force the fallback (used by the benchmark and the
backend-equivalence tests). Both backends are draw-for-draw identical.
"""

import os

if os.environ.get("MEMSOC_NO_EXT"):
    from . import py_backend as _impl
else:
    try:
        from . import _core as _impl
    except ImportError:
        from . import py_backend as _impl

BACKEND = _impl.NAME
closed_loop_program = _impl.closed_loop_program
noisy_vmm = _impl.noisy_vmm
