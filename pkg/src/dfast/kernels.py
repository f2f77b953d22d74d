"""Kernel backend selection.

The compiled extension ``dfast._ckernels`` is used when it imports cleanly;
otherwise the numpy implementations in ``dfast._pykernels`` are used. Set
``DFAST_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DFAST_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd


def use_backend(name):
    """Switch kernel implementations at runtime ("cython" or "python").

    Returns the previously active backend name. Raises ImportError when the
    compiled extension is requested but not available.
    """
    global BACKEND, _impl, layer_norm_fwd, layer_norm_bwd, gelu_fwd, gelu_bwd
    global softmax_fwd, softmax_bwd
    previous = BACKEND
    if name == "cython":
        from . import _ckernels as impl
    elif name == "python":
        impl = _pykernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    _impl = impl
    BACKEND = name
    layer_norm_fwd = impl.layer_norm_fwd
    layer_norm_bwd = impl.layer_norm_bwd
    gelu_fwd = impl.gelu_fwd
    gelu_bwd = impl.gelu_bwd
    softmax_fwd = impl.softmax_fwd
    softmax_bwd = impl.softmax_bwd
    return previous
