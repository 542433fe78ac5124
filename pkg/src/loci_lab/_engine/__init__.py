"""Engine selection: compiled Cython core with a pure-Python fallback.

The compiled extension ``_core`` implements the hot kernels (adaptive
Dormand-Prince stepping of the characteristic flow and of the linearized
frame system for the conformal model family).  ``_pyref`` is the NumPy twin
with identical coefficients and step control.  Selection happens once at
import; ``LOCI_LAB_ENGINE=python|compiled`` overrides (``compiled`` raises
if the extension is unavailable).
"""

from __future__ import annotations

import os

from . import _pyref

_choice = os.environ.get("LOCI_LAB_ENGINE", "auto").lower()

if _choice == "python":
    _impl = _pyref
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _pyref
        BACKEND = "python"

integrate_flow = _impl.integrate_flow
integrate_frame = _impl.integrate_frame


def backends():
    """All importable backends, for parity tests and benchmarks."""
    out = {"python": _pyref}
    try:
        from . import _core
        out["compiled"] = _core
    except ImportError:
        pass
    return out
