"""Path-kernel backend selection at import time.

The compiled extension is used when present; otherwise the numpy fallback.
Both implement the same contract bit for bit (tested), so selection never
changes results. Set BBMLAB_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os

from . import kernel_py

if os.environ.get("BBMLAB_PURE_PYTHON") == "1":
    _impl = kernel_py
else:
    try:
        from . import _kernel as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = kernel_py

run_paths = _impl.run_paths
NAME: str = _impl.NAME


def backend_name() -> str:
    """'compiled' or 'python', whichever run_paths dispatches to."""
    return NAME
