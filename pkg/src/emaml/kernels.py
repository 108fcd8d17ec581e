"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation in ``_pykernels`` is used. Setting ``EMAML_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _pykernels

if os.environ.get("EMAML_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

mlp_forward_one = _impl.mlp_forward_one
cartpole_step = _impl.cartpole_step
manifold_flows = _impl.manifold_flows
discounted_returns = _impl.discounted_returns


def backends():
    """Return ``{name: module}`` for every importable kernel backend."""
    found = {"python": _pykernels}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
