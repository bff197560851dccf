"""RT-space kernel selection.

The compiled extension is used when it was built; otherwise the pure-Python
twin is loaded. Set ``SPBSIM_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import rtspace_py

if os.environ.get("SPBSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = rtspace_py
else:
    try:
        from . import _rtspace as _impl
    except ImportError:  # extension not built
        _impl = rtspace_py

Timeline = _impl.Timeline
place = _impl.place
place_on = _impl.place_on
Planner = _impl.Planner
NEVER = rtspace_py.NEVER
INFEASIBLE = rtspace_py.INFEASIBLE
DEFERRED = rtspace_py.DEFERRED
BACKEND = "compiled" if _impl is not rtspace_py else "python"

IMPLEMENTATIONS = {"python": rtspace_py}
try:
    from . import _rtspace as _compiled
    IMPLEMENTATIONS["compiled"] = _compiled
except ImportError:
    pass
