"""Hot-loop kernels: compiled extension when built, numpy fallback otherwise.

Set ``KNOWFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback as fallback

compiled = None
if os.environ.get("KNOWFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else fallback
BACKEND = "compiled" if compiled is not None else "python"

pair_flows = _impl.pair_flows
ragged_relatedness = _impl.ragged_relatedness
efron_derivatives = _impl.efron_derivatives

__all__ = ["BACKEND", "compiled", "fallback", "pair_flows", "ragged_relatedness",
           "efron_derivatives"]
