"""Hot-path geometry and integration kernels.

A compiled Cython core is used when available; a pure-Python twin with
identical semantics is the fallback. Set ``TRAFFICLAB_PURE_PY=1`` to force
the interpreted backend (useful for debugging and for the backend-parity
benchmark).
"""

import os

from . import _core_py

if os.environ.get("TRAFFICLAB_PURE_PY"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"

wrap_angle = _impl.wrap_angle
rect_overlap = _impl.rect_overlap
rect_corners = _impl.rect_corners
rect_distance = _impl.rect_distance
point_segment = _impl.point_segment
segments_intersect = _impl.segments_intersect
segment_distance = _impl.segment_distance
point_in_polygon = _impl.point_in_polygon
polyline_project = _impl.polyline_project
bicycle_advance = _impl.bicycle_advance
collide_pairs = _impl.collide_pairs

pure = _core_py
