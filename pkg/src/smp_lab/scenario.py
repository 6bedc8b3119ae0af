"""Scenario files: JSON documents describing one experiment.

Top-level keys (all optional except what a command needs)::

    experiment  free-form tag
    grid        {"T": 1.0, "n_steps": 100}
    n_paths     number of Monte Carlo paths
    seed        unsigned 64-bit master seed
    delay       {"kind": "proportional", "a": 0.5} and the other delay kinds
    model       general coefficients as expressions over t, x, y, u, v
    lq          linear-quadratic block (constants or polynomial lists in t)
    absde       backward equation block: driver, anticipation, terminal
    solver      numerical settings
    check       settings for gradient and optimality checks

Unknown keys are rejected and every value is range-checked at load time.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .coefficients import PARTIAL_NAMES, CoefficientSet
from .delay import DelaySpec, TimeGrid, realize_delay
from .errors import ConfigurationError, ExpressionError
from .expr import Expression
from .forward import ControlProcess
from .lq import TIME_FUNCTIONS, LQCoefficients
from .regression import VARIABLES, RegressionBasis
from .rng import check_seed

COEF_VARS = ("t", "x", "y", "u", "v")
DRIVER_VARS = ("t", "y", "z")
TERMINAL_VARS = ("x", "w")
TIME_VARS = ("t",)

_REQUIRED = object()


def _take(block, where, spec):
    """Validate a dict against ``spec`` (key -> default); reject unknown keys."""
    if not isinstance(block, dict):
        raise ConfigurationError(f"{where} must be an object")
    unknown = sorted(set(block) - set(spec))
    if unknown:
        raise ConfigurationError(f"unknown key {where}.{unknown[0]}" if where else
                                 f"unknown key {unknown[0]}")
    out = {}
    for key, default in spec.items():
        if key in block:
            out[key] = block[key]
        elif default is _REQUIRED:
            raise ConfigurationError(f"missing required key {where}.{key}" if where else
                                     f"missing required key {key}")
        else:
            out[key] = default
    return out


def _number(value, name, lo=None, hi=None, lo_open=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} must be a number")
    if integer and int(value) != value:
        raise ConfigurationError(f"{name} must be an integer")
    if not np.isfinite(value):
        raise ConfigurationError(f"{name} must be finite")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigurationError(f"{name} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and value > hi:
        raise ConfigurationError(f"{name} must be <= {hi}")
    return int(value) if integer else float(value)


def _bound(value, name):
    if value is None:
        return None
    return _number(value, name)


def _expr(text, variables, name):
    if isinstance(text, bool) or not isinstance(text, (str, int, float)):
        raise ConfigurationError(f"{name} must be an expression string or a number")
    try:
        return Expression(text, variables)
    except ExpressionError as exc:
        raise ExpressionError(f"{name}: {exc}", exc.token, exc.position) from None


@dataclass(frozen=True)
class ModelConfig:
    coefficients: CoefficientSet
    x0: float
    control: Expression
    u_min: float
    u_max: float


@dataclass(frozen=True)
class AbsdeConfig:
    driver: Expression
    anticipation: Optional[Expression]
    terminal: Expression


@dataclass(frozen=True)
class SolverConfig:
    degree: int = 2
    ridge: Optional[float] = None
    variables: Optional[Tuple[str, ...]] = None
    beta: float = 1.0
    damping: float = 0.5
    tol: float = 1e-4
    k_max: int = 50
    picard_tol: float = 1e-18
    picard_k_max: int = 50
    fixed_point_tol: float = 1e-10
    fixed_point_k_max: int = 50
    riccati_steps: int = 2 ** 20

    @property
    def basis(self):
        return RegressionBasis(self.degree, self.ridge, self.variables)


@dataclass(frozen=True)
class CheckConfig:
    control: Optional[Expression] = None
    direction: Optional[Expression] = None
    eps: Tuple[float, ...] = (0.1, 0.05)
    candidates: int = 20
    perturbations: int = 20
    certificate_eps: Tuple[float, ...] = (0.1, 0.01)
    atol: float = 1e-3


@dataclass(frozen=True)
class Scenario:
    experiment: str
    T: float
    n_steps: int
    n_paths: int
    seed: int
    delay: DelaySpec
    model: Optional[ModelConfig]
    lq: Optional[LQCoefficients]
    absde: Optional[AbsdeConfig]
    solver: SolverConfig
    check: CheckConfig
    raw: dict = field(repr=False, compare=False)
    source_bytes: bytes = field(default=b"", repr=False, compare=False)

    @property
    def grid(self):
        return TimeGrid(self.T, self.n_steps)

    def delay_map(self, threads=None):
        grid = self.grid
        if self.lq is not None:
            return self.lq.delay(grid)
        return realize_delay(self.delay, grid, self.n_paths, self.seed, threads)

    def coefficient_set(self):
        if self.lq is not None:
            return self.lq.as_coefficients()
        if self.model is not None:
            return self.model.coefficients
        raise ConfigurationError("scenario has no model or lq block")

    @property
    def x0(self):
        if self.lq is not None:
            return self.lq.x0
        if self.model is not None:
            return self.model.x0
        raise ConfigurationError("scenario has no model or lq block")

    def control(self, expression=None):
        expression = expression if expression is not None else (
            self.model.control if self.model is not None else Expression("0", TIME_VARS))
        lo = self.model.u_min if self.model is not None else -np.inf
        hi = self.model.u_max if self.model is not None else np.inf
        return ControlProcess.from_function(self.grid, expression, lo, hi)

    def require(self, *blocks):
        for name in blocks:
            if name == "model-or-lq":
                if self.model is None and self.lq is None:
                    raise ConfigurationError("scenario needs a model or lq block")
            elif getattr(self, name) is None:
                raise ConfigurationError(f"scenario needs a {name} block")
        return self

    def with_overrides(self, seed=None, n_paths=None):
        raw = dict(self.raw)
        changes = {}
        if seed is not None:
            raw["seed"] = changes["seed"] = check_seed(seed)
        if n_paths is not None:
            raw["n_paths"] = changes["n_paths"] = _number(n_paths, "n_paths", lo=1, integer=True)
        return replace(self, raw=raw, **changes)

    @property
    def scenario_hash(self):
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def config_digest(self):
        """Git blob id of the file contents."""
        data = self.source_bytes
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _parse_delay(block):
    if block is None:
        return DelaySpec.none()
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigurationError("delay must be an object with a kind")
    params = {
        "proportional": ("a",),
        "fixed-lag": ("lag",),
        "random-slope": ("a_lo", "a_hi"),
        "piecewise-jump": ("rate", "step"),
        "none": (),
    }
    kind = block["kind"]
    if kind not in params:
        raise ConfigurationError(f"unknown delay kind {kind!r}; expected one of {sorted(params)}")
    spec = {"kind": _REQUIRED}
    spec.update({k: _REQUIRED for k in params[kind]})
    vals = _take(block, "delay", spec)
    if kind == "none":
        return DelaySpec.none()
    nums = {k: _number(vals[k], f"delay.{k}") for k in params[kind]}
    return DelaySpec(kind, **nums)


def _parse_model(block):
    vals = _take(block, "model", {
        "b": "0", "sigma": "0", "f": "0", "g": "0", "partials": {}, "fd_fallback": True,
        "x0": 0.0, "control": "0", "u_min": None, "u_max": None,
    })
    fns = {k: _expr(vals[k], COEF_VARS, f"model.{k}") for k in ("b", "sigma", "f")}
    g = _expr(vals["g"], ("x",), "model.g")
    if not isinstance(vals["partials"], dict):
        raise ConfigurationError("model.partials must be an object")
    partials = {}
    for name, text in vals["partials"].items():
        if name not in PARTIAL_NAMES:
            raise ConfigurationError(f"unknown key model.partials.{name}")
        partials[name] = _expr(text, ("x",) if name == "g_x" else COEF_VARS,
                               f"model.partials.{name}")
    if not isinstance(vals["fd_fallback"], bool):
        raise ConfigurationError("model.fd_fallback must be true or false")
    u_min = _bound(vals["u_min"], "model.u_min")
    u_max = _bound(vals["u_max"], "model.u_max")
    u_min = -np.inf if u_min is None else u_min
    u_max = np.inf if u_max is None else u_max
    if u_min > u_max:
        raise ConfigurationError("model.u_min must not exceed model.u_max")
    coeffs = CoefficientSet(fns["b"], fns["sigma"], fns["f"], g, partials, vals["fd_fallback"])
    return ModelConfig(coeffs, _number(vals["x0"], "model.x0"),
                       _expr(vals["control"], TIME_VARS, "model.control"), u_min, u_max)


def _parse_lq(block):
    spec = {k: 0.0 for k in TIME_FUNCTIONS}
    spec.update(R=1.0, G=1.0, a=0.5, x0=1.0, delta=1e-6)
    vals = _take(block, "lq", spec)
    kwargs = {}
    for k in TIME_FUNCTIONS:
        v = vals[k]
        if isinstance(v, list):
            if not v:
                raise ConfigurationError(f"lq.{k} polynomial list must be non-empty")
            kwargs[k] = tuple(_number(c, f"lq.{k}") for c in v)
        else:
            kwargs[k] = _number(v, f"lq.{k}")
    for k in ("G", "a", "x0", "delta"):
        kwargs[k] = _number(vals[k], f"lq.{k}")
    if not 0 < kwargs["a"] <= 1:
        raise ConfigurationError("a must lie in (0,1]")
    return LQCoefficients(**kwargs)


def _parse_absde(block):
    vals = _take(block, "absde", {"driver": "0", "anticipation": None, "terminal": _REQUIRED})
    ant = vals["anticipation"]
    return AbsdeConfig(
        _expr(vals["driver"], DRIVER_VARS, "absde.driver"),
        None if ant is None else _expr(ant, DRIVER_VARS, "absde.anticipation"),
        _expr(vals["terminal"], TERMINAL_VARS, "absde.terminal"))


def _parse_solver(block):
    d = SolverConfig()
    vals = _take(block, "solver", {k: getattr(d, k) for k in d.__dataclass_fields__})
    out = dict(
        degree=_number(vals["degree"], "solver.degree", lo=0, integer=True),
        ridge=None if vals["ridge"] is None else _number(vals["ridge"], "solver.ridge", lo=0),
        beta=_number(vals["beta"], "solver.beta", lo=0, lo_open=True),
        damping=_number(vals["damping"], "solver.damping", lo=0, hi=1, lo_open=True),
        riccati_steps=_number(vals["riccati_steps"], "solver.riccati_steps", lo=1, integer=True),
    )
    for k in ("tol", "picard_tol", "fixed_point_tol"):
        out[k] = _number(vals[k], f"solver.{k}", lo=0, lo_open=True)
    for k in ("k_max", "picard_k_max", "fixed_point_k_max"):
        out[k] = _number(vals[k], f"solver.{k}", lo=1, integer=True)
    variables = vals["variables"]
    if variables is not None:
        if not isinstance(variables, list) or any(v not in VARIABLES for v in variables):
            raise ConfigurationError(f"solver.variables must be a list drawn from {VARIABLES}")
        variables = tuple(variables)
    out["variables"] = variables
    return SolverConfig(**out)


def _eps_list(value, name):
    if not isinstance(value, list) or not value:
        raise ConfigurationError(f"{name} must be a non-empty list")
    return tuple(_number(e, name, lo=0, lo_open=True) for e in value)


def _parse_check(block):
    d = CheckConfig()
    vals = _take(block, "check", {
        "control": None, "direction": "1", "eps": list(d.eps), "candidates": d.candidates,
        "perturbations": d.perturbations, "certificate_eps": list(d.certificate_eps),
        "atol": d.atol,
    })
    return CheckConfig(
        None if vals["control"] is None else _expr(vals["control"], TIME_VARS, "check.control"),
        _expr(vals["direction"], TIME_VARS, "check.direction"),
        _eps_list(vals["eps"], "check.eps"),
        _number(vals["candidates"], "check.candidates", lo=1, integer=True),
        _number(vals["perturbations"], "check.perturbations", lo=0, integer=True),
        _eps_list(vals["certificate_eps"], "check.certificate_eps"),
        _number(vals["atol"], "check.atol", lo=0),
    )


def parse_scenario(raw, source_bytes=b""):
    if not isinstance(raw, dict):
        raise ConfigurationError("scenario must be a JSON object")
    if not raw:
        raise ConfigurationError("scenario is empty")
    top = _take(raw, "", {
        "experiment": "unnamed", "grid": {}, "n_paths": 1000, "seed": 0, "delay": None,
        "model": None, "lq": None, "absde": None, "solver": {}, "check": {},
    })
    grid = _take(top["grid"], "grid", {"T": 1.0, "n_steps": 100})
    T = _number(grid["T"], "grid.T", lo=0, lo_open=True)
    n_steps = _number(grid["n_steps"], "grid.n_steps", lo=2, integer=True)
    if not isinstance(top["experiment"], str):
        raise ConfigurationError("experiment must be a string")
    n_paths = _number(top["n_paths"], "n_paths", lo=1, integer=True)
    seed = top["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    seed = check_seed(seed)
    if top["model"] is not None and top["lq"] is not None:
        raise ConfigurationError("use either a model block or an lq block, not both")
    if top["lq"] is not None and top["delay"] is not None:
        raise ConfigurationError("the lq block fixes the delay through lq.a; remove delay")
    delay = _parse_delay(top["delay"]).validate(T)
    model = None if top["model"] is None else _parse_model(top["model"])
    lq = None if top["lq"] is None else _parse_lq(top["lq"])
    absde = None if top["absde"] is None else _parse_absde(top["absde"])
    return Scenario(top["experiment"], T, n_steps, n_paths, seed, delay, model, lq, absde,
                    _parse_solver(top["solver"]), _parse_check(top["check"]), raw, source_bytes)


def load_scenario(path):
    """Read and validate a scenario file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc.strerror}") from None
    text = data.decode("utf-8", errors="replace")
    if not text.strip():
        raise ConfigurationError(f"{path}: scenario is empty")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}") from None
    return parse_scenario(raw, data)
