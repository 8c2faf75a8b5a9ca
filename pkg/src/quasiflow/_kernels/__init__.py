"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it was built; set
``QUASIFLOW_BACKEND=python`` to force the fallback. Both backends expose
the same functions and produce identical results.
"""
import os

from . import _py

if os.environ.get("QUASIFLOW_BACKEND", "").lower() == "python":
    _impl = _py
else:
    try:
        from . import _cy as _impl
    except ImportError:  # extension not built
        _impl = _py

BACKEND = _impl.BACKEND
segment_sum = _impl.segment_sum
flow_static = _impl.flow_static
flow_temporal = _impl.flow_temporal
graph_metrics = _impl.graph_metrics


def backends():
    """Available backend modules keyed by name."""
    out = {"python": _py}
    try:
        from . import _cy
        out["cython"] = _cy
    except ImportError:
        pass
    return out
