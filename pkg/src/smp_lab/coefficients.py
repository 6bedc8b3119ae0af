"""Model coefficients ``b, sigma, f, g`` and their partial derivatives.

Coefficient callables take ``(t, x, y, u, v)`` where ``y = X_{tau(t)}`` and
``v = u_{tau(t)}``; they must accept NumPy arrays and broadcast.  ``g``
takes the terminal state only.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .errors import CoefficientValidationError, ConfigurationError
from .rng import STREAM_PROBE, stream_generator

log = logging.getLogger(__name__)

ARGS = ("x", "y", "u", "v")
FUNCS = ("b", "sigma", "f")
PARTIAL_NAMES = tuple(f"{fn}_{a}" for fn in FUNCS for a in ARGS) + ("g_x",)

PARTIAL_TOL = 1e-4


@dataclass
class CoefficientSet:
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    partials: Dict[str, Callable] = field(default_factory=dict)
    fd_fallback: bool = False
    h_fd: float = 1e-6

    def __post_init__(self):
        unknown = set(self.partials) - set(PARTIAL_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown partial names {sorted(unknown)}")

    def has_partial(self, name):
        return name in self.partials or self.fd_fallback

    def partial(self, name):
        """Analytic partial if supplied, else a central difference when allowed."""
        if name not in PARTIAL_NAMES:
            raise ConfigurationError(f"unknown partial {name!r}")
        if name in self.partials:
            return self.partials[name]
        if not self.fd_fallback:
            raise ConfigurationError(
                f"partial {name} is not supplied and finite-difference fallback is off")
        return fd_partial(self, name, self.h_fd)

    def func(self, name):
        return getattr(self, name)


def _scaled_step(h, value):
    return h * (1.0 + np.abs(value))


def fd_partial(coeffs, name, h):
    """Central-difference partial ``name`` of ``coeffs``."""
    fn_name, arg = name.split("_")
    fn = coeffs.func(fn_name)
    if fn_name == "g":
        def dg(x):
            x = np.asarray(x, dtype=float)
            step = _scaled_step(h, x)
            return (fn(x + step) - fn(x - step)) / (2 * step)
        return dg

    k = ARGS.index(arg)

    def d(t, x, y, u, v):
        args = [np.asarray(a, dtype=float) for a in (x, y, u, v)]
        step = _scaled_step(h, args[k])
        up = list(args)
        dn = list(args)
        up[k] = args[k] + step
        dn[k] = args[k] - step
        return (np.asarray(fn(t, *up)) - np.asarray(fn(t, *dn))) / (2 * step)
    return d


@dataclass
class CoefficientReport:
    lipschitz: Dict[str, float]
    growth: Dict[str, float]
    superlinear: list
    partial_discrepancy: Dict[str, float]

    @property
    def max_lipschitz(self):
        return max(self.lipschitz.values())

    @property
    def max_growth(self):
        return max(self.growth.values())

    @property
    def max_partial_discrepancy(self):
        return max(self.partial_discrepancy.values(), default=0.0)


def _evaluate(fn, t, pts):
    return np.broadcast_to(np.asarray(fn(t, *pts), dtype=float), t.shape)


def check_coefficients(coeffs, probes=256, seed=0, T=1.0, radius=10.0, h_fd=1e-5,
                       tol=PARTIAL_TOL):
    """Probe growth, Lipschitz behaviour and supplied partials on random points.

    The growth and Lipschitz ratios are the squared forms
    ``|phi|^2 / (1 + |x|^2 + |y|^2 + |u|^2 + |v|^2)`` and
    ``|phi(p1) - phi(p2)|^2 / |p1 - p2|^2``.  A function whose growth ratio on
    points ten times further out exceeds ten times the inner ratio is
    reported as superlinear (a warning only).  Analytic partials that differ
    from central differences by more than ``tol`` (relative to
    ``max(1, |fd|)``) raise :class:`CoefficientValidationError`.
    """
    if probes < 1:
        raise ConfigurationError("probes must be >= 1")
    gen = stream_generator(seed, STREAM_PROBE)
    t = gen.uniform(0.0, T, probes)
    p1 = gen.uniform(-radius, radius, (4, probes))
    p2 = p1 + gen.normal(0.0, 1.0, (4, probes)) * gen.choice([1e-3, 1.0, radius], (1, probes))
    norm1 = 1.0 + (p1 ** 2).sum(axis=0)
    outer = 10.0 * p1
    norm_outer = 1.0 + (outer ** 2).sum(axis=0)
    dist = ((p1 - p2) ** 2).sum(axis=0)

    lipschitz, growth, superlinear = {}, {}, []
    for name in FUNCS:
        fn = coeffs.func(name)
        v1 = _evaluate(fn, t, p1)
        v2 = _evaluate(fn, t, p2)
        lipschitz[name] = float(np.max((v1 - v2) ** 2 / dist))
        inner = float(np.max(v1 ** 2 / norm1))
        far = float(np.max(_evaluate(fn, t, outer) ** 2 / norm_outer))
        growth[name] = inner
        if far > 10.0 * max(inner, 1e-300):
            superlinear.append(name)
            log.warning("coefficient %s grows faster than linearly on the probe set", name)

    xg = p1[0]
    gv1 = np.broadcast_to(np.asarray(coeffs.g(xg), dtype=float), xg.shape)
    gv2 = np.broadcast_to(np.asarray(coeffs.g(p2[0]), dtype=float), xg.shape)
    dg = (p1[0] - p2[0]) ** 2
    lipschitz["g"] = float(np.max((gv1 - gv2) ** 2 / dg))
    growth["g"] = float(np.max(gv1 ** 2 / (1.0 + xg ** 2)))

    discrepancy = {}
    for name, analytic in coeffs.partials.items():
        fd = fd_partial(coeffs, name, h_fd)
        if name == "g_x":
            a = np.asarray(analytic(xg), dtype=float)
            d = np.asarray(fd(xg), dtype=float)
        else:
            a = _evaluate(analytic, t, p1)
            d = _evaluate(fd, t, p1)
        discrepancy[name] = float(np.max(np.abs(a - d) / np.maximum(1.0, np.abs(d))))

    report = CoefficientReport(lipschitz, growth, superlinear, discrepancy)
    bad = {k: v for k, v in discrepancy.items() if v > tol}
    if bad:
        raise CoefficientValidationError(
            "analytic partials disagree with finite differences: "
            + ", ".join(f"{k} (rel. discrepancy {v:.3g})" for k, v in sorted(bad.items())))
    return report
