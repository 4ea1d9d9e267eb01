"""Kernel backend selection.

The hot inner loops (cloth substeps, triangle rasterization) exist twice:
compiled Cython kernels in `flagfit._native` and a pure-NumPy mirror in
`flagfit._fallback`.  The compiled core is preferred when importable; set
FLAGFIT_BACKEND=numpy to force the fallback or FLAGFIT_BACKEND=native to
fail loudly when the extension is missing.  Both backends implement the
same contract and are cross-checked in the test suite.
"""

import os

from .errors import ConfigError

_requested = os.environ.get("FLAGFIT_BACKEND", "auto")
if _requested not in ("auto", "native", "numpy"):
    raise ConfigError(
        f"FLAGFIT_BACKEND={_requested!r}; expected 'auto', 'native' or 'numpy'"
    )

if _requested == "numpy":
    from . import _fallback as kernels

    BACKEND = "numpy"
else:
    try:
        from . import _native as kernels  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        if _requested == "native":
            raise
        from . import _fallback as kernels  # type: ignore[no-redef]

        BACKEND = "numpy"
