"""Hot-kernel dispatch.

Uses the compiled ``_kernels`` extension when it was built, otherwise the
numpy fallback. Set ``MSGTRANSFER_PURE_PYTHON=1`` to force the fallback.
"""

import os

from msgtransfer import _fallback

fallback = _fallback

if os.environ.get("MSGTRANSFER_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from msgtransfer import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

_active = compiled if compiled is not None else _fallback

BACKEND = "compiled" if compiled is not None else "python"

splitmix64_block = _active.splitmix64_block
uniform_block = _active.uniform_block
gaussian_block = _active.gaussian_block
ula_diag_mixture_chain = _active.ula_diag_mixture_chain
