"""Hot-kernel backend selection.

The compiled Cython core (`_native`) is preferred when it was built;
otherwise the numpy fallback is used. `BEVLOC_BACKEND=numpy|native|auto`
overrides the choice at import time. Both backends implement the same
contracts; `bevloc bench` compares their throughput.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

_mode = os.environ.get("BEVLOC_BACKEND", "auto").lower()
if _mode == "numpy":
    _impl = _fallback
elif _mode == "native":
    if _native is None:
        raise RuntimeError(
            "BEVLOC_BACKEND=native but the compiled extension is unavailable"
        )
    _impl = _native
elif _mode == "auto":
    _impl = _native if _native is not None else _fallback
else:
    raise RuntimeError(f"unknown BEVLOC_BACKEND value {_mode!r}")


def backend_name() -> str:
    """Name of the backend selected at import ("native" or "numpy")."""
    return _impl.NAME


def available_backends() -> dict:
    """Mapping of backend name -> module, for benchmarks and parity tests."""
    out = {"numpy": _fallback}
    if _native is not None:
        out["native"] = _native
    return out


fill_polygon = _impl.fill_polygon
splat_volume = _impl.splat_volume
masked_corr = _impl.masked_corr

# The matcher's production route: always FFT (the native direct kernel is
# quadratic in window area and exists for validation and benchmarks).
masked_corr_fft = _fallback.masked_corr
