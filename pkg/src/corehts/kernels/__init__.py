"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``COREHTS_KERNELS=python``
to force the fallback or ``COREHTS_KERNELS=cython`` to fail loudly when the
extension is missing.
"""
import os
from types import ModuleType

from . import _python

_choice = os.environ.get("COREHTS_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"COREHTS_KERNELS must be auto, python or cython, not {_choice!r}")

_impl: ModuleType = _python
BACKEND = "python"
if _choice != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise

rnn_forward = _impl.rnn_forward
rnn_backward = _impl.rnn_backward
batchnorm_forward = _impl.batchnorm_forward
batchnorm_backward = _impl.batchnorm_backward
crps_energy = _impl.crps_energy


def backends() -> dict[str, ModuleType]:
    """All importable backends by name (always includes ``python``)."""
    out = {"python": _python}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
