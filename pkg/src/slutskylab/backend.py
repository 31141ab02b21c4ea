"""Kernel backend selection: compiled extension with pure-Python fallback.

The compiled `_kernels` module is preferred when importable; set
SLUTSKYLAB_BACKEND=python or =compiled to force a choice (the latter
fails loudly if the extension is missing rather than silently degrading).
"""

import os

from .errors import ConfigError

_choice = os.environ.get("SLUTSKYLAB_BACKEND", "").strip().lower()

if _choice == "python":
    from . import _kernels_py as kernels
elif _choice == "compiled":
    from . import _kernels as kernels  # ImportError here is deliberate
elif _choice in ("", "auto"):
    try:
        from . import _kernels as kernels
    except ImportError:
        from . import _kernels_py as kernels
else:
    raise ConfigError(
        f"SLUTSKYLAB_BACKEND={_choice!r}: expected 'python', 'compiled' or 'auto'"
    )

BACKEND = "compiled" if kernels.COMPILED else "python"
