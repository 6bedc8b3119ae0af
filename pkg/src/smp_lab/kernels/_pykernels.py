"""NumPy implementations of the hot loops.

These are the reference semantics for the compiled kernels in
``_ckernels.pyx``; both must produce bit-identical results.  Arrays are
time-major: row ``i`` is grid node ``t_i`` and column ``p`` is a path.
"""

import numpy as np


def linear_delay_euler(out, ax, ay, au, av, sx, sy, su, sv, tau, inp, dW, dt, p0, p1):
    """Euler recursion for a linear SDE with a delayed state and input.

    For paths ``p0 <= p < p1`` fills rows ``1..n_steps`` of ``out`` with::

        x' = x + (ax*x + ay*y + au*u + av*w)*dt + (sx*x + sy*y + su*u + sv*w)*dW

    where ``y = out[tau[i, p], p]``, ``u = inp[i, p]`` and ``w = inp[tau[i, p], p]``.
    Row 0 of ``out`` must already hold the initial values.
    """
    n_steps = dW.shape[0]
    cols = np.arange(p0, p1)
    for i in range(n_steps):
        x = out[i, p0:p1]
        j = tau[i, p0:p1]
        y = out[j, cols]
        u = inp[i, p0:p1]
        w = inp[j, cols]
        drift = ax[i, p0:p1] * x + ay[i, p0:p1] * y + au[i, p0:p1] * u + av[i, p0:p1] * w
        diff = sx[i, p0:p1] * x + sy[i, p0:p1] * y + su[i, p0:p1] * u + sv[i, p0:p1] * w
        out[i + 1, p0:p1] = x + drift * dt + diff * dW[i, p0:p1]


def pseudo_inverse_index(tau, theta, p0, p1):
    """``theta[i, p] = min{j : tau[j, p] >= i}`` or ``n_nodes`` when empty.

    ``tau`` must be nondecreasing down each column.  Counting the entries
    below ``i`` gives the same answer as the min-search for monotone columns.
    """
    n_nodes = tau.shape[0]
    block = tau[:, p0:p1]
    width = p1 - p0
    offsets = np.arange(width) * (n_nodes + 1)
    counts = np.bincount((block + offsets[None, :]).ravel(order="F"),
                         minlength=width * (n_nodes + 1))
    counts = counts.reshape(width, n_nodes + 1).T
    cum = np.cumsum(counts, axis=0)
    theta[0, p0:p1] = 0
    theta[1:, p0:p1] = cum[:n_nodes - 1]


def riccati_backward(K, A, C, D, H, Q, R, h):
    """Explicit backward Euler for the scalar Riccati equation.

    ``-K' = 2 A K + D^2 K + Q - ((C + D H) K)^2 / (R + H^2 K)`` from the
    terminal value already stored in ``K[-1]``; coefficients are sampled at
    the fine nodes and read at the right end of each step.  Works on lists or
    1-D arrays.
    """
    for k in range(len(K) - 1, 0, -1):
        k1 = K[k]
        gain = (C[k] + D[k] * H[k]) * k1
        K[k - 1] = k1 + h * (2.0 * A[k] * k1 + D[k] * D[k] * k1 + Q[k]
                             - gain * gain / (R[k] + H[k] * H[k] * k1))
