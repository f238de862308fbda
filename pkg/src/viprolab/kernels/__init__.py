"""Hot-kernel backend selection.

The compiled Cython extension (``viprolab.kernels._core``) is preferred when
it built; otherwise the numpy fallback (``_numpy``) is used. Override with
the environment variable ``VIPROLAB_BACKEND``:

* ``auto`` (default) — native if available, else numpy
* ``native`` — require the extension, raise if missing
* ``numpy`` — force the fallback

``backend_name()`` reports which one is active. Both backends produce
bit-identical RNG streams; encoder kernels agree to float rounding.
"""

import os

from . import _numpy

_choice = os.environ.get("VIPROLAB_BACKEND", "auto").lower()

if _choice not in ("auto", "native", "numpy"):
    raise RuntimeError(f"VIPROLAB_BACKEND must be auto|native|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = _numpy
    _name = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        _name = "native"
    except ImportError:
        if _choice == "native":
            raise
        _impl = _numpy
        _name = "numpy"

xoshiro_fill = _impl.xoshiro_fill
encode_frames_fwd = _impl.encode_frames_fwd
encode_frames_bwd = _impl.encode_frames_bwd


def backend_name():
    return _name
