"""Optional numba compilation.

Everything decorated here stays plain Python when numba is missing or when
``FUZZY_BACKSTEPPING_NOJIT=1`` is set, so the same source serves both paths.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENABLED = numba is not None and os.environ.get("FUZZY_BACKSTEPPING_NOJIT", "") not in ("1", "true")


def jit(fn):
    """Compile a module-level kernel with on-disk caching."""
    if not ENABLED:
        return fn
    return numba.njit(cache=True)(fn)


def compile_function(fn):
    """Compile a user-supplied scalar/array function, no caching."""
    if not ENABLED:
        return fn
    if isinstance(fn, numba.core.registry.CPUDispatcher):
        return fn
    return numba.njit(fn)


def py_func(fn):
    """Return the undecorated Python function behind a jitted one."""
    return getattr(fn, "py_func", fn)
