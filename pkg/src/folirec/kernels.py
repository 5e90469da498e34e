"""Backend selection for the transport hot kernel.

Prefers the compiled extension when it imported cleanly; the numpy
implementation is always available as a fallback and handles fiber dims the
extension does not. Set FOLIREC_PURE_PYTHON=1 to force the fallback.
"""

import os

import numpy as np

from . import _transport_py

_compiled = None
if not os.environ.get("FOLIREC_PURE_PYTHON"):
    try:
        from . import _transport as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def backend_name():
    return BACKEND


def ordered_exp_product(omegas, dts):
    """Path-ordered product of exp(-omega_i * dt_i) over substeps.

    omegas: (n, k, k) float64, dts: (n,). First substep is applied first.
    """
    omegas = np.ascontiguousarray(omegas, dtype=np.float64)
    dts = np.ascontiguousarray(dts, dtype=np.float64)
    if _compiled is not None and omegas.shape[1] <= 2:
        return _compiled.ordered_exp_product(omegas, dts)
    return _transport_py.ordered_exp_product(omegas, dts)
