"""Kernel dispatch: the compiled ``_core`` extension when built, numpy otherwise.

Set ``LIDARKIT_PURE_PYTHON=1`` to force the numpy path.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
normals_kernel = _fallback.normals_kernel
classify_kernel = _fallback.classify_kernel
voxel_nn_kernel = _fallback.voxel_nn_kernel

if os.environ.get("LIDARKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        _core = None
    if _core is not None:
        BACKEND = "compiled"
        normals_kernel = _core.normals_kernel
        classify_kernel = _core.classify_kernel
        voxel_nn_kernel = _core.voxel_nn_kernel

pack_keys = _fallback.pack_keys
unpack_keys = _fallback.unpack_keys
