"""Backend selection for the per-slab kernels.

The compiled extension is used when it imports; set ``STDAMAGE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("STDAMAGE_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"


def get(backend: str | None = None):
    """Kernel module for ``backend`` (default: the one selected at import)."""
    name = backend or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
