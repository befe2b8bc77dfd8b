"""Hot-kernel backend selection.

The compiled extension (`splatsim._kernels.native`, built from native.pyx)
and the pure-numpy fallback (`splatsim._kernels.pyk`) expose the same
functions. The native module is preferred when importable; set
SPLATSIM_BACKEND=python or =native to force one. Call sites may also pass
backend="python"/"native" explicitly, e.g. to cross-check the two paths.
"""

import os

from splatsim._kernels import pyk

try:
    from splatsim._kernels import native
except ImportError:
    native = None


def available_backends():
    return ("python", "native") if native is not None else ("python",)


def default_backend():
    forced = os.environ.get("SPLATSIM_BACKEND")
    if forced in ("python", "native"):
        return forced
    return "native" if native is not None else "python"


def resolve(backend="auto"):
    """Map a backend name to its kernel module."""
    if backend == "auto":
        backend = default_backend()
    if backend == "python":
        return pyk
    if backend == "native":
        if native is None:
            raise RuntimeError(
                "native kernel extension is not built; install with a C compiler "
                "or use backend='python'"
            )
        return native
    raise ValueError(f"unknown backend {backend!r}")
