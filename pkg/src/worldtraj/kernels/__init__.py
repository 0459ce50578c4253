"""Hot-kernel dispatch: compiled Cython core when available, numpy otherwise.

Set WORLDTRAJ_KERNELS=python to force the numpy reference implementation.
"""

from __future__ import annotations

import os

from . import numpy_backend

BACKEND = "python"
fk_chain_forward = numpy_backend.fk_chain_forward
fk_chain_backward = numpy_backend.fk_chain_backward
rot_scan_forward = numpy_backend.rot_scan_forward
rot_scan_backward = numpy_backend.rot_scan_backward

if os.environ.get("WORLDTRAJ_KERNELS", "").lower() not in ("python", "numpy"):
    try:
        from . import _core  # type: ignore[attr-defined]

        fk_chain_forward = _core.fk_chain_forward
        fk_chain_backward = _core.fk_chain_backward
        rot_scan_forward = _core.rot_scan_forward
        rot_scan_backward = _core.rot_scan_backward
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        pass
