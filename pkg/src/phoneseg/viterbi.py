"""Backend selection for the Viterbi forward pass.

The compiled kernel is used when it was built; otherwise the numpy version.
Set ``PHONESEG_BACKEND=python`` to force the fallback.
"""
import os

from . import _viterbi_py

python_forward = _viterbi_py.forward

try:
    from ._viterbi import forward as compiled_forward
except ImportError:  # extension not built
    compiled_forward = None

if compiled_forward is not None and os.environ.get("PHONESEG_BACKEND", "").lower() != "python":
    forward = compiled_forward
    BACKEND = "cython"
else:
    forward = python_forward
    BACKEND = "python"


def get_forward(name=None):
    """Return the forward function for ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return forward
    if name == "python":
        return python_forward
    if name == "cython":
        if compiled_forward is None:
            raise ImportError("compiled Viterbi kernel is not available")
        return compiled_forward
    raise ValueError(f"unknown backend {name!r}")
