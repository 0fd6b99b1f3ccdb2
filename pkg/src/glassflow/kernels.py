"""Backend selection for the Monte Carlo hot loop.

The compiled ``_pt_kernel`` extension is used when it was built; otherwise the
numpy implementation in ``_pt_python`` is used. Both take the same arguments
and consume the same pre-drawn uniforms.
"""

from . import _pt_python

try:
    from . import _pt_kernel
except ImportError:  # extension not built
    _pt_kernel = None

BACKENDS = ("compiled", "python")

_active = _pt_kernel if _pt_kernel is not None else _pt_python


def available_backends():
    return tuple(b for b in BACKENDS if b == "python" or _pt_kernel is not None)


def backend_name():
    return "compiled" if _active is _pt_kernel else "python"


def set_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    previous = backend_name()
    if name == "compiled":
        if _pt_kernel is None:
            raise RuntimeError("compiled kernel is not built; run `pip install -e .`")
        _active = _pt_kernel
    elif name == "python":
        _active = _pt_python
    else:
        raise ValueError(f"unknown backend {name!r}; choose from {BACKENDS}")
    return previous


def get_module(name=None):
    if name is None:
        return _active
    if name == "compiled":
        if _pt_kernel is None:
            raise RuntimeError("compiled kernel is not built")
        return _pt_kernel
    if name == "python":
        return _pt_python
    raise ValueError(f"unknown backend {name!r}")
