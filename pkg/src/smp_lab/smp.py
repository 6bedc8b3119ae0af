"""Maximum-principle checks for the delayed control problem.

The Hamiltonian ``H = b p + sigma q + f`` is evaluated on the discrete
adjoint with ``p`` read as ``E_i[p_{i+1}]`` (the ``y_pred`` row of the
backward solution) and ``q`` as ``z_i``.  With that convention the adjoint
Gateaux formula is the exact dual of the Euler scheme for the variational
equation, up to the error of the regression estimator.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .absde import FrozenCoefficients
from .errors import ConfigurationError
from .forward import ControlProcess, DelayedReader, euler_maruyama, _check_finite
from .regression import Conditioning, RegressionBasis
from .rng import STREAM_CANDIDATE, stream_generator


def hamiltonian(t, x, y, u, v, p, q, coeffs):
    """``b(t, x, y, u, v) p + sigma(t, x, y, u, v) q + f(t, x, y, u, v)``."""
    return (coeffs.b(t, x, y, u, v) * p + coeffs.sigma(t, x, y, u, v) * q
            + coeffs.f(t, x, y, u, v))


@dataclass
class CostEstimate:
    """Sample mean of per-path costs and its Monte Carlo standard error."""

    value: float
    stderr: float
    samples: np.ndarray = field(repr=False)

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=np.float64)
        n = samples.shape[0]
        se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(samples)), se, samples)


def cost_functional(coeffs, state, control):
    """``E[sum_i f(t_i, X_i, X_tau, u_i, u_tau) dt + g(X_T)]`` over the ensemble."""
    grid = state.grid
    n = state.n_paths
    t = grid.nodes
    reader = DelayedReader(state.delay, n)
    X, U = state.X, control.values
    running = np.zeros(n)
    for i in range(grid.n_steps):
        running += coeffs.f(t[i], X[i], reader.read(X, i), U[i], reader.read(U, i)) * grid.dt
    total = running + np.broadcast_to(coeffs.g(X[-1]), (n,))
    return CostEstimate.from_samples(total)


@dataclass
class VariationalEnsemble:
    """First-order sensitivity ``V`` of the state in the direction ``v``."""

    grid: object
    V: np.ndarray
    direction: ControlProcess


def _partial_rows(frozen, name, n_steps, n_paths):
    rows = [frozen.at(name, i) for i in range(n_steps)]
    if all(r.ndim == 0 for r in rows):
        return np.array([float(r) for r in rows])
    return np.stack([np.broadcast_to(r, (n_paths,)) for r in rows])


def variational_solve(coeffs, star, u_star, v, delay=None, bundle=None, threads=None,
                      backend=None):
    """Euler scheme for the linear delayed SDE of the state sensitivity.

    ``dV = (b_x V + b_y V_tau + b_u v + b_v v_tau) dt + (sigma_x V + ... ) dW``,
    ``V_0 = 0``, with partials frozen along ``(X*, u*)``.
    """
    delay = star.delay if delay is None else delay
    bundle = star.bundle if bundle is None else bundle
    grid = star.grid
    if v.grid != grid or delay.grid != grid:
        raise ConfigurationError("direction, delay and state must share one grid")
    N, n = grid.n_steps, star.n_paths
    frozen = FrozenCoefficients(coeffs, star, u_star)
    names = {"ax": "b_x", "ay": "b_y", "au": "b_u", "av": "b_v",
             "sx": "sigma_x", "sy": "sigma_y", "su": "sigma_u", "sv": "sigma_v"}
    frozen.require(names.values())
    coefs = {k: _partial_rows(frozen, name, N, n) for k, name in names.items()}
    V = kernels.linear_delay_euler(0.0, coefs, delay.tau_idx, v.values, bundle.dW, grid.dt,
                                   threads=threads, backend=backend)
    for i in range(N + 1):
        _check_finite(V[i], i, "variational state")
    return VariationalEnsemble(grid, V, v)


def _hamiltonian_partials(coeffs, frozen, adjoint, i, which):
    P = adjoint.y_pred[i]
    Q = adjoint.z[i]
    return (frozen.at(f"b_{which}", i) * P + frozen.at(f"sigma_{which}", i) * Q
            + frozen.at(f"f_{which}", i))


def _hu_hv(coeffs, frozen, adjoint, n):
    N = adjoint.grid.n_steps
    hu = np.empty((N, n))
    hv = np.empty((N, n))
    for i in range(N):
        hu[i] = _hamiltonian_partials(coeffs, frozen, adjoint, i, "u")
        hv[i] = _hamiltonian_partials(coeffs, frozen, adjoint, i, "v")
    return hu, hv


@dataclass
class GateauxEstimate:
    """Adjoint directional derivative; ``changed`` is the dtheta-weighted form."""

    value: float
    stderr: float
    changed: float
    samples: np.ndarray = field(repr=False)


def _range_sums(values, inv, n):
    """``sum_{j in [theta_i, theta_{i+1})} values[j]`` per path, for each node ``i``."""
    N = values.shape[0]
    C = np.zeros((N + 1, n))
    for j in range(N - 1, -1, -1):
        C[j] = C[j + 1] + values[j]
    cap = inv.capped
    if inv.shared:
        return C[cap[:-1, 0]] - C[cap[1:, 0]]
    cols = np.arange(n)
    cap = inv.broadcast_capped(n)
    return C[cap[:-1], cols] - C[cap[1:], cols]


def gateaux_adjoint(coeffs, u_star, v, adjoint, delay, inv, star):
    """``E sum_i (H_u(t_i) v_i + H_v(t_i) v_{tau_i}) dt`` along the adjoint.

    The changed-variables form ``E sum_i v_i (H_u(t_i) + sum_{j: tau_j = i} H_v(t_j)) dt``
    is returned as a diagnostic; on the grid the two agree to rounding.
    """
    grid = star.grid
    n = star.n_paths
    frozen = FrozenCoefficients(coeffs, star, u_star)
    frozen.require(("b_u", "b_v", "sigma_u", "sigma_v", "f_u", "f_v"))
    hu, hv = _hu_hv(coeffs, frozen, adjoint, n)
    vals = v.broadcast(n)
    reader = DelayedReader(delay, n)
    per_path = np.zeros(n)
    for i in range(grid.n_steps):
        per_path += (hu[i] * vals[i] + hv[i] * reader.read(v.values, i)) * grid.dt
    est = CostEstimate.from_samples(per_path)
    changed = float(np.mean(np.sum(vals * (hu + _range_sums(hv, inv, n)), axis=0) * grid.dt))
    return GateauxEstimate(est.value, est.stderr, changed, per_path)


@dataclass
class FDEstimate:
    """Richardson-extrapolated central difference with its spread."""

    value: float
    stderr: float
    spread: float
    per_eps: dict
    rejected: list


def _perturbed(u_star, v, eps):
    vals = u_star.values + eps * v.values
    clipped = np.clip(vals, u_star.u_min, u_star.u_max)
    frac = float(np.mean(clipped != vals))
    return ControlProcess(u_star.grid, clipped, u_star.u_min, u_star.u_max), frac


def gateaux_fd(coeffs, u_star, v, delay, bundle, eps_list, x0, max_projected=0.01):
    """Central-difference derivative of ``J`` along ``v`` with common noise.

    Perturbed controls are projected onto ``[u_min, u_max]``; an ``eps`` whose
    projection touches more than ``max_projected`` of the entries is rejected.
    The two smallest accepted ``eps`` are combined assuming
    ``D(eps) = D + c eps^2``; ``spread`` is the distance between the
    extrapolated value and the smallest-``eps`` difference quotient.
    """
    eps_sorted = sorted({float(e) for e in eps_list}, reverse=True)
    if not eps_sorted or eps_sorted[-1] <= 0:
        raise ConfigurationError("eps_list must contain positive values")
    per_eps, samples, rejected = {}, {}, []
    for eps in eps_sorted:
        up, f_up = _perturbed(u_star, v, eps)
        dn, f_dn = _perturbed(u_star, v, -eps)
        if max(f_up, f_dn) > max_projected:
            rejected.append(eps)
            continue
        j_up = cost_functional(coeffs, euler_maruyama(coeffs, up, delay, bundle, x0), up)
        j_dn = cost_functional(coeffs, euler_maruyama(coeffs, dn, delay, bundle, x0), dn)
        s = (j_up.samples - j_dn.samples) / (2 * eps)
        samples[eps] = s
        per_eps[eps] = float(np.mean(s))
    if not samples:
        raise ConfigurationError("every eps in eps_list leaves the admissible set")
    keys = sorted(samples)
    if len(keys) == 1:
        combined = samples[keys[0]]
        spread = 0.0
    else:
        e2, e1 = keys[0], keys[1]
        w = e1 ** 2 / (e1 ** 2 - e2 ** 2)
        combined = w * samples[e2] + (1 - w) * samples[e1]
        spread = abs(float(np.mean(combined)) - per_eps[e2])
    est = CostEstimate.from_samples(combined)
    return FDEstimate(est.value, est.stderr, spread, per_eps, rejected)


@dataclass
class StationarityResidual:
    grid: object
    r: np.ndarray

    @property
    def summary(self):
        """Sup over nodes of the L2(paths) norm."""
        return float(np.max(np.sqrt(np.mean(self.r ** 2, axis=1))))


def stationarity_residual(coeffs, u_star, star, adjoint, delay, inv, basis=None):
    """``H_u(t_i) + E_i[sum_{j: tau_j = i} H_v(t_j)]`` at every node.

    Nodes whose anticipated range lies inside ``{i}`` on every path need no
    regression; with no delay the residual is then exactly ``H_u + H_v``.
    """
    basis = RegressionBasis() if basis is None else basis
    n = star.n_paths
    frozen = FrozenCoefficients(coeffs, star, u_star)
    frozen.require(("b_u", "b_v", "sigma_u", "sigma_v", "f_u", "f_v"))
    hu, hv = _hu_hv(coeffs, frozen, adjoint, n)
    sums = _range_sums(hv, inv, n)
    cap = inv.capped
    i = np.arange(star.grid.n_steps)[:, None]
    local = ((cap[:-1] >= i) & (cap[1:] <= i + 1)).all(axis=1)
    cond = Conditioning(star.bundle, star, delay)
    variables = cond.resolve(basis)
    r = np.empty_like(hu)
    for k in range(star.grid.n_steps):
        if local[k]:
            r[k] = hu[k] + sums[k]
        else:
            r[k] = hu[k] + cond.fit(k, sums[k], basis, variables).fitted
    return StationarityResidual(star.grid, r)


@dataclass
class InequalityReport:
    means: np.ndarray
    stderrs: np.ndarray
    minima: np.ndarray
    tolerances: np.ndarray

    @property
    def violating(self):
        return [int(k) for k in np.flatnonzero(self.means < -self.tolerances)]

    @property
    def passed(self):
        return not self.violating


def variational_inequality_check(residual, u_star, candidates=20, seed=0, atol=1e-3):
    """Test ``E sum_i r_i (alpha_i - u*_i) dt >= 0`` for random admissible ``alpha``.

    Candidates are uniform on ``[u_min, u_max]`` node by node when both bounds
    are finite, otherwise ``u* + c0 + c1 t`` with standard normal ``c``.  A
    candidate fails when its mean falls below ``-(3 stderr + atol mean|alpha - u*|)``;
    ``atol`` absorbs the regression bias of the residual.  The raw minimum of
    ``r (alpha - u*)`` over nodes and paths is reported as well.
    """
    if candidates < 1:
        raise ConfigurationError("candidates must be >= 1")
    grid = residual.grid
    n = residual.r.shape[1]
    t = grid.nodes[:-1][:, None]
    u = u_star.broadcast(n)
    gen = stream_generator(seed, STREAM_CANDIDATE)
    bounded = np.isfinite(u_star.u_min) and np.isfinite(u_star.u_max)
    means, ses, mins, tols = [], [], [], []
    for _ in range(candidates):
        if bounded:
            alpha = gen.uniform(u_star.u_min, u_star.u_max, (grid.n_steps, 1))
        else:
            c = gen.standard_normal(2)
            alpha = u + c[0] + c[1] * t
        diff = alpha - u
        prod = residual.r * diff
        est = CostEstimate.from_samples(np.sum(prod, axis=0) * grid.dt)
        means.append(est.value)
        ses.append(est.stderr)
        mins.append(float(np.min(prod)))
        tols.append(3 * est.stderr + atol * float(np.mean(np.abs(diff))) * grid.T)
    return InequalityReport(np.array(means), np.array(ses), np.array(mins), np.array(tols))


@dataclass
class DualityReport:
    lhs: float
    rhs: float

    @property
    def rel_err(self):
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), 1e-300)


def duality_check(coeffs, star, u_star, variational, adjoint):
    """Compare ``E[g_x(X_T) V_T]`` with the sum assembled from ``(p, q, V, v)``.

    ``rhs = E sum_i [-(f_x V_i + f_y V_tau) + P (b_u v + b_v v_tau) + q (sigma_u v + sigma_v v_tau)] dt``
    """
    grid = star.grid
    n = star.n_paths
    frozen = FrozenCoefficients(coeffs, star, u_star)
    reader = DelayedReader(star.delay, n)
    V = variational.V
    vv = variational.direction.values
    lhs = float(np.mean(np.broadcast_to(coeffs.partial("g_x")(star.X[-1]), (n,)) * V[-1]))
    acc = np.zeros(n)
    for i in range(grid.n_steps):
        vi, vt = vv[i], reader.read(vv, i)
        P, Q = adjoint.y_pred[i], adjoint.z[i]
        acc -= frozen.at("f_x", i) * V[i] + frozen.at("f_y", i) * reader.read(V, i)
        acc += P * (frozen.at("b_u", i) * vi + frozen.at("b_v", i) * vt)
        acc += Q * (frozen.at("sigma_u", i) * vi + frozen.at("sigma_v", i) * vt)
    return DualityReport(lhs, float(np.mean(acc * grid.dt)))
