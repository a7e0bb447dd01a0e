"""Backend selection for the hot kernels.

The compiled extension is preferred when importable; otherwise the numpy
fallback is used.  ``SCENE_SAMPLER_BACKEND=python`` forces the fallback
(useful for benchmarking and parity testing).  Both backends are required to
produce bit-identical results, so the choice never affects outputs.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _kernels_py

log = logging.getLogger(__name__)

VOXEL_COORD_LIMIT = _kernels_py.VOXEL_COORD_LIMIT


def _load_compiled() -> ModuleType | None:
    try:
        from . import _kernels_c  # type: ignore[attr-defined]

        return _kernels_c
    except ImportError:
        return None


def available_backends() -> dict[str, ModuleType]:
    """All importable backends keyed by name."""
    backends = {"python": _kernels_py}
    compiled = _load_compiled()
    if compiled is not None:
        backends["compiled"] = compiled
    return backends


def _select() -> tuple[str, ModuleType]:
    forced = os.environ.get("SCENE_SAMPLER_BACKEND", "").strip().lower()
    backends = available_backends()
    if forced in ("python", "py"):
        return "python", backends["python"]
    if forced in ("compiled", "c"):
        if "compiled" not in backends:
            raise ImportError(
                "SCENE_SAMPLER_BACKEND=compiled but the extension is not built"
            )
        return "compiled", backends["compiled"]
    if "compiled" in backends:
        return "compiled", backends["compiled"]
    log.debug("compiled kernels unavailable; using numpy fallback")
    return "python", backends["python"]


BACKEND, _impl = _select()

pack_voxel_keys = _impl.pack_voxel_keys
unpack_voxel_keys = _impl.unpack_voxel_keys
count_uncovered = _impl.count_uncovered
mark_covered = _impl.mark_covered


def use_backend(name: str) -> str:
    """Rebind the kernel functions to a backend; returns the previous name.

    Only for benchmarking and parity tests; results are identical either way.
    """
    global BACKEND, _impl, pack_voxel_keys, unpack_voxel_keys, count_uncovered, mark_covered
    backends = available_backends()
    if name not in backends:
        raise KeyError(f"backend {name!r} not available (have {sorted(backends)})")
    previous = BACKEND
    BACKEND = name
    _impl = backends[name]
    pack_voxel_keys = _impl.pack_voxel_keys
    unpack_voxel_keys = _impl.unpack_voxel_keys
    count_uncovered = _impl.count_uncovered
    mark_covered = _impl.mark_covered
    return previous


class forced_backend:
    """Context manager wrapper around :func:`use_backend`."""

    def __init__(self, name: str):
        self.name = name
        self._previous: str | None = None

    def __enter__(self):
        self._previous = use_backend(self.name)
        return self.name

    def __exit__(self, *exc):
        use_backend(self._previous)
        return False
