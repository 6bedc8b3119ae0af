import numpy as np
import pytest

from smp_lab import kernels
from smp_lab.brownian import sample_brownian
from smp_lab.delay import DelaySpec, make_time_grid, realize_delay
from smp_lab.forward import ControlProcess, euler_maruyama
from smp_lab.lq import LQCoefficients, lq_forward

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def random_inputs(rng, n_steps=30, n_paths=700):
    coefs = {k: rng.normal(0, 0.5, (n_steps, n_paths)) for k in ("ax", "ay", "au", "sx")}
    coefs["av"] = rng.normal(0, 0.5, n_steps)
    coefs["sy"] = 0.2
    tau = np.maximum.accumulate(
        np.minimum(rng.integers(0, n_steps + 1, (n_steps + 1, n_paths)), np.arange(n_steps + 1)[:, None]),
        axis=0)
    tau = np.minimum(tau, np.arange(n_steps + 1)[:, None])
    inputs = rng.normal(size=(n_steps, n_paths))
    dW = rng.normal(0, 0.1, (n_steps, n_paths))
    return coefs, tau, inputs, dW


def reference_euler(x0, coefs, tau, inputs, dW, dt):
    n_steps, n_paths = dW.shape
    c = {k: np.broadcast_to(np.asarray(coefs.get(k, 0.0)).reshape(-1, 1) if np.ndim(coefs.get(k, 0.0)) == 1
                            else coefs.get(k, 0.0), (n_steps, n_paths)) for k in kernels._COEF_NAMES}
    inp = np.concatenate([inputs, inputs[-1:]])
    X = np.empty((n_steps + 1, n_paths))
    X[0] = x0
    cols = np.arange(n_paths)
    for i in range(n_steps):
        y = X[tau[i], cols]
        v = inp[tau[i], cols]
        drift = c["ax"][i] * X[i] + c["ay"][i] * y + c["au"][i] * inputs[i] + c["av"][i] * v
        diff = c["sx"][i] * X[i] + c["sy"][i] * y + c["su"][i] * inputs[i] + c["sv"][i] * v
        X[i + 1] = X[i] + drift * dt + diff * dW[i]
    return X


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_euler_matches_reference(backend, rng):
    coefs, tau, inputs, dW = random_inputs(rng)
    out = kernels.linear_delay_euler(0.7, coefs, tau, inputs, dW, 0.03, backend=backend)
    assert np.allclose(out, reference_euler(0.7, coefs, tau, inputs, dW, 0.03), rtol=1e-13, atol=1e-13)


def test_backends_are_bit_identical(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    coefs, tau, inputs, dW = random_inputs(rng)
    a = kernels.linear_delay_euler(1.0, coefs, tau, inputs, dW, 0.01, backend="python")
    b = kernels.linear_delay_euler(1.0, coefs, tau, inputs, dW, 0.01, backend="cython")
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("threads", [1, 4, 8])
def test_linear_euler_thread_invariance(threads, rng):
    coefs, tau, inputs, dW = random_inputs(rng, n_paths=3000)
    ref = kernels.linear_delay_euler(1.0, coefs, tau, inputs, dW, 0.01, threads=1)
    assert kernels.linear_delay_euler(1.0, coefs, tau, inputs, dW, 0.01, threads=threads).tobytes() == ref.tobytes()


def test_unknown_coefficient_key():
    with pytest.raises(ValueError):
        kernels.linear_delay_euler(0.0, {"bx": 1.0}, np.zeros((3, 1), int), 0.0, np.zeros((2, 1)), 0.1)
    with pytest.raises(ValueError):
        kernels.linear_delay_euler(0.0, {}, np.zeros((3, 1), int), 0.0, np.zeros((2, 1)), 0.1,
                                   backend="fortran")


def test_lq_forward_matches_generic_euler():
    g = make_time_grid(1.0, 40)
    b = sample_brownian(g, 500, 6)
    lq = LQCoefficients(A=(0.1, 0.3), B=0.4, C=1.0, P=-0.5, D=0.2, F=0.1, H=0.3, N=0.2, a=0.6)
    u = ControlProcess.from_function(g, lambda t: np.sin(2 * t))
    fast = lq_forward(lq, u, b).X
    slow = euler_maruyama(lq.as_coefficients(), u, realize_delay(DelaySpec.proportional(0.6), g), b, lq.x0).X
    assert np.allclose(fast, slow, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_riccati_kernel_closed_form(backend):
    # Q = A = D = H = 0, C = R = 1: K(t) = G / (1 + G (T - t))
    M = 4000
    h = 1.0 / M
    t = np.linspace(0, 1, M + 1)
    zeros, ones = np.zeros(M + 1), np.ones(M + 1)
    K = kernels.riccati_backward(2.0, dict(A=zeros, C=ones, D=zeros, H=zeros, Q=zeros, R=ones), h,
                                 backend=backend)
    assert np.allclose(K, 2.0 / (1 + 2.0 * (1 - t)), rtol=2e-3)


def test_riccati_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    M = 500
    t = np.linspace(0, 1, M + 1)
    coefs = dict(A=0.3 + t, C=np.ones(M + 1), D=0.2 * t, H=0.1 + 0 * t, Q=1 + t ** 2, R=2 + 0 * t)
    a = kernels.riccati_backward(1.5, coefs, 1 / M, backend="python")
    b = kernels.riccati_backward(1.5, coefs, 1 / M, backend="cython")
    assert np.allclose(a, b, rtol=1e-14, atol=0)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
