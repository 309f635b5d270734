"""Backend selection for the numerical kernels.

The compiled extension is used when it imports cleanly; otherwise the
numpy implementation is used. Set ``QUADGUARD_PURE_PYTHON=1`` to force the
fallback (handy for benchmarking and for cross-checking the two backends).
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("QUADGUARD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

deriv = _impl.deriv
deriv_jac = _impl.deriv_jac
rk4_step = _impl.rk4_step
rk4_step_jac = _impl.rk4_step_jac
rotor_wrench = _impl.rotor_wrench
net_wrench_full = _impl.net_wrench_full
net_wrench_near_hover = _impl.net_wrench_near_hover
mech_step_jac = _impl.mech_step_jac
cov_predict = _impl.cov_predict
detect_stream = _impl.detect_stream

__all__ = [
    "BACKEND", "python_backend", "compiled_backend",
    "deriv", "deriv_jac", "rk4_step", "rk4_step_jac", "rotor_wrench",
    "net_wrench_full", "net_wrench_near_hover", "mech_step_jac", "cov_predict",
    "detect_stream",
]
