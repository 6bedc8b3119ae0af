"""Hot-loop kernels with a compiled core and a NumPy fallback.

The Cython extension is used when it was built; set ``SMP_LAB_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the implementation in use.
"""

import os

import numpy as np

from ..parallel import path_blocks, run_blocks
from . import _pykernels

try:
    if os.environ.get("SMP_LAB_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"

_COEF_NAMES = ("ax", "ay", "au", "av", "sx", "sy", "su", "sv")


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _ckernels
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {backend!r}")


def _as_2d(value, shape, dtype=np.float64):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[:, None]
    return np.broadcast_to(arr, shape)


def linear_delay_euler(x0, coefs, tau, inputs, dW, dt, threads=None, backend=None):
    """Simulate a linear delayed SDE on the grid.

    Parameters
    ----------
    x0 : float or array of shape (n_paths,)
    coefs : mapping with keys ax, ay, au, av, sx, sy, su, sv; each value is
        broadcastable to ``(n_steps, n_paths)`` (scalars, per-step vectors or
        full arrays). Missing keys are zero.
    tau : int array broadcastable to ``(n_steps + 1, n_paths)``, delayed node index.
    inputs : array broadcastable to ``(n_steps, n_paths)``, the control-like input.
    dW : array of shape ``(n_steps, n_paths)``.

    Returns
    -------
    ndarray of shape ``(n_steps + 1, n_paths)``.
    """
    dW = np.asarray(dW, dtype=np.float64)
    n_steps, n_paths = dW.shape
    shape = (n_steps, n_paths)
    views = [_as_2d(coefs.get(k, 0.0), shape) for k in _COEF_NAMES]
    unknown = set(coefs) - set(_COEF_NAMES)
    if unknown:
        raise ValueError(f"unknown coefficient keys {sorted(unknown)}")
    tau_v = _as_2d(tau, (n_steps + 1, n_paths), np.int64)
    inp = _as_2d(inputs, shape)
    out = np.empty((n_steps + 1, n_paths))
    out[0] = x0
    impl = _impl(backend)

    def work(a, b):
        impl.linear_delay_euler(out, *views, tau_v, inp, dW, float(dt), a, b)

    run_blocks(work, path_blocks(n_paths, block=max(256, n_paths // 8 + 1)), threads)
    return out


def pseudo_inverse_index(tau, threads=None, backend=None):
    """Column-wise ``min{j : tau[j] >= i}``, with ``n_nodes`` meaning none."""
    tau = np.ascontiguousarray(tau, dtype=np.int64)
    theta = np.empty_like(tau)
    impl = _impl(backend)

    def work(a, b):
        impl.pseudo_inverse_index(tau, theta, a, b)

    run_blocks(work, path_blocks(tau.shape[1], block=max(256, tau.shape[1] // 8 + 1)), threads)
    return theta


def riccati_backward(terminal, coefs, h, backend=None):
    """Scalar Riccati values on a fine grid, integrated backward from ``terminal``.

    ``coefs`` maps A, C, D, H, Q, R to arrays sampled at the ``M + 1`` fine nodes.
    """
    arrays = [np.ascontiguousarray(coefs[k], dtype=np.float64) for k in "ACDHQR"]
    K = np.empty(arrays[0].shape[0])
    K[-1] = terminal
    impl = _impl(backend)
    if impl is _pykernels:
        # plain floats keep the scalar loop fast
        arrays = [a.tolist() for a in arrays]
        out = K.tolist()
        impl.riccati_backward(out, *arrays, float(h))
        return np.asarray(out)
    impl.riccati_backward(K, *arrays, float(h))
    return K

