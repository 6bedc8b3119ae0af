# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled versions of the loops in ``_pykernels``.

Inputs may be stride-0 broadcast views, so every memoryview is strided and
read-only arrays are declared ``const``.
"""


def linear_delay_euler(double[:, :] out,
                       const double[:, :] ax, const double[:, :] ay,
                       const double[:, :] au, const double[:, :] av,
                       const double[:, :] sx, const double[:, :] sy,
                       const double[:, :] su, const double[:, :] sv,
                       const long long[:, :] tau, const double[:, :] inp,
                       const double[:, :] dW, double dt,
                       Py_ssize_t p0, Py_ssize_t p1):
    cdef Py_ssize_t n_steps = dW.shape[0]
    cdef Py_ssize_t i, p, j
    cdef double x, y, u, w, drift, diff
    with nogil:
        for i in range(n_steps):
            for p in range(p0, p1):
                x = out[i, p]
                j = <Py_ssize_t>tau[i, p]
                y = out[j, p]
                u = inp[i, p]
                w = inp[j, p]
                drift = ax[i, p] * x + ay[i, p] * y + au[i, p] * u + av[i, p] * w
                diff = sx[i, p] * x + sy[i, p] * y + su[i, p] * u + sv[i, p] * w
                out[i + 1, p] = x + drift * dt + diff * dW[i, p]


def pseudo_inverse_index(const long long[:, :] tau, long long[:, :] theta,
                         Py_ssize_t p0, Py_ssize_t p1):
    cdef Py_ssize_t n_nodes = tau.shape[0]
    cdef Py_ssize_t i, j, p
    with nogil:
        for p in range(p0, p1):
            j = 0
            for i in range(n_nodes):
                while j < n_nodes and tau[j, p] < i:
                    j += 1
                theta[i, p] = j


def riccati_backward(double[:] K, const double[:] A, const double[:] C,
                     const double[:] D, const double[:] H, const double[:] Q,
                     const double[:] R, double h):
    cdef Py_ssize_t k
    cdef double k1, gain
    with nogil:
        for k in range(K.shape[0] - 1, 0, -1):
            k1 = K[k]
            gain = (C[k] + D[k] * H[k]) * k1
            K[k - 1] = k1 + h * (2.0 * A[k] * k1 + D[k] * D[k] * k1 + Q[k]
                                 - gain * gain / (R[k] + H[k] * H[k] * k1))
