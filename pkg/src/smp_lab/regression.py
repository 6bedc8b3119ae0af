"""Least-squares estimator of conditional expectations ``E[. | F_t]``.

Targets are regressed on monomials of the conditioning variables observed at
``t``: the state ``x``, the Brownian motion ``w``, the delayed state
``x_delay`` and the realized delay time ``tau``.  Variables are standardized
before the monomials are formed, constant or duplicated columns are dropped,
and a ridge term (never applied to the intercept) keeps the normal equations
solvable.  Because the intercept is unpenalized, fitted values always have
the same sample mean as the targets.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, EstimationError
from .forward import DelayedReader, StateEnsemble
from .brownian import BrownianBundle

VARIABLES = ("x", "w", "x_delay", "tau")
DEFAULT_VARIABLES = ("x", "w", "tau")
DEFAULT_RIDGE_SCALE = 1e-8

# Paths per chunk when accumulating Gram matrices; fixed so sums are reproducible.
_CHUNK = 16384


@dataclass(frozen=True)
class RegressionBasis:
    degree: int = 2
    ridge: Optional[float] = None
    variables: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise ConfigurationError("basis degree must be a nonnegative integer")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigurationError("ridge must be >= 0")
        if self.variables is not None:
            bad = set(self.variables) - set(VARIABLES)
            if bad:
                raise ConfigurationError(f"unknown conditioning variables {sorted(bad)}")
            object.__setattr__(self, "variables", tuple(self.variables))


def monomial_exponents(n_vars, degree):
    """Exponent tuples of all monomials of total degree <= ``degree``."""
    out = [(0,) * n_vars]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for k in combo:
                e[k] += 1
            out.append(tuple(e))
    return out


def _design(z, exponents):
    n = z.shape[0]
    cols = []
    for e in exponents:
        c = np.ones(n)
        for k, power in enumerate(e):
            if power:
                c = c * z[:, k] ** power
        cols.append(c)
    return np.column_stack(cols)


def _chunked_gram(phi, y=None):
    n = phi.shape[0]
    g = np.zeros((phi.shape[1], phi.shape[1]))
    b = None if y is None else np.zeros((phi.shape[1],) + y.shape[1:])
    for s in range(0, n, _CHUNK):
        block = phi[s:s + _CHUNK]
        g += block.T @ block
        if y is not None:
            b += block.T @ y[s:s + _CHUNK]
    return g / n, (None if b is None else b / n)


def _chunked_rhs(phi, y):
    b = np.zeros((phi.shape[1],) + y.shape[1:])
    for s in range(0, phi.shape[0], _CHUNK):
        b += phi[s:s + _CHUNK].T @ y[s:s + _CHUNK]
    return b / phi.shape[0]


class FittedRegression:
    """Fitted least-squares projection; callable on new feature rows."""

    def __init__(self, mean, scale, keep, exponents, phi, solver, coef):
        self.mean = mean
        self.scale = scale
        self.keep = keep
        self.exponents = exponents
        self.phi = phi
        self._solver = solver
        self.coef = coef

    @property
    def n_basis(self):
        return len(self.exponents)

    @property
    def fitted(self):
        return self.phi @ self.coef

    def project(self, targets):
        """In-sample projection of other targets onto the same basis."""
        y = np.asarray(targets, dtype=np.float64)
        return self.phi @ (self._solver @ _chunked_rhs(self.phi, y))

    def __call__(self, features):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        z = (f[:, self.keep] - self.mean) / self.scale
        return _design(z, self.exponents) @ self.coef


def _standardize(features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    n, k = f.shape
    if k == 0:
        return f, np.zeros(0), np.ones(0), np.zeros(0, dtype=int)
    mean = f.mean(axis=0)
    centered = f - mean
    scale = np.sqrt((centered ** 2).mean(axis=0))
    keep = []
    for j in range(k):
        if not scale[j] > 1e-12 * (1.0 + abs(mean[j])):
            continue
        zj = centered[:, j] / scale[j]
        dup = False
        for m in keep:
            corr = float(np.mean(zj * centered[:, m] / scale[m]))
            if abs(corr) > 1.0 - 1e-12:
                dup = True
                break
        if not dup:
            keep.append(j)
    keep = np.asarray(keep, dtype=int)
    z = centered[:, keep] / scale[keep]
    return z, mean[keep], scale[keep], keep


def regress_conditional(features, targets, basis):
    """Fit ``targets ~ polynomial(features)`` by ridge least squares.

    ``features`` is ``(n_samples, n_vars)``; ``targets`` is ``(n_samples,)`` or
    ``(n_samples, n_targets)``.  The ridge is ``basis.ridge`` or, when unset,
    ``1e-8 * trace(Gram) / dim``.
    """
    y = np.asarray(targets, dtype=np.float64)
    n = y.shape[0]
    z, mean, scale, keep = _standardize(features)
    if z.shape[0] != n:
        raise ConfigurationError("features and targets must have the same number of samples")
    exponents = monomial_exponents(z.shape[1], basis.degree)
    if n < len(exponents):
        raise EstimationError(
            f"{n} samples cannot fit {len(exponents)} basis functions")
    phi = _design(z, exponents)
    gram, rhs = _chunked_gram(phi, y)
    dim = gram.shape[0]
    lam = basis.ridge if basis.ridge is not None else DEFAULT_RIDGE_SCALE * np.trace(gram) / dim
    penalized = gram.copy()
    idx = np.arange(1, dim)
    penalized[idx, idx] += lam
    solver = np.linalg.lstsq(penalized, np.eye(dim), rcond=None)[0]
    coef = solver @ rhs
    return FittedRegression(mean, scale, keep, exponents, phi, solver, coef)


class Conditioning:
    """Supplies the conditioning variables observed at each grid node."""

    def __init__(self, bundle, state=None, delay=None):
        self.bundle = bundle
        self.state = state
        self.delay = delay if delay is not None else (state.delay if state is not None else None)
        n = bundle.n_paths
        self._reader = DelayedReader(self.delay, n) if self.delay is not None else None

    @classmethod
    def of(cls, source, bundle=None, delay=None):
        if isinstance(source, Conditioning):
            return source
        if isinstance(source, StateEnsemble):
            return cls(source.bundle if bundle is None else bundle, source, delay)
        if isinstance(source, BrownianBundle):
            return cls(source, None, delay)
        raise ConfigurationError("conditioning must be a StateEnsemble or a BrownianBundle")

    @property
    def available(self):
        out = ["w"]
        if self.state is not None:
            out.insert(0, "x")
            out.append("x_delay")
        if self.delay is not None and not self.delay.shared:
            out.append("tau")
        return tuple(out)

    def resolve(self, basis):
        if basis.variables is None:
            return tuple(v for v in DEFAULT_VARIABLES if v in self.available)
        missing = [v for v in basis.variables if v not in self.available]
        if missing:
            raise ConfigurationError(
                f"conditioning variables {missing} are not available from this source")
        return basis.variables

    def features(self, i, variables):
        cols = []
        for v in variables:
            if v == "w":
                cols.append(self.bundle.W[i])
            elif v == "x":
                cols.append(self.state.X[i])
            elif v == "x_delay":
                cols.append(self._reader.read(self.state.X, i))
            elif v == "tau":
                cols.append(self.delay.broadcast(self.bundle.n_paths)[i] * self.delay.grid.dt)
        if not cols:
            return np.zeros((self.bundle.n_paths, 0))
        return np.column_stack(cols)

    def fit(self, i, targets, basis, variables=None):
        variables = self.resolve(basis) if variables is None else variables
        return regress_conditional(self.features(i, variables), targets, basis)
