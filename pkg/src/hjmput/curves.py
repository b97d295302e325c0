"""Forward-curve state space.

Curves live on a uniform grid over [0, x_max] and are extended by their last
value beyond the grid (forward curves flatten out at long maturities).  The
space carries a weighted Sobolev norm

    ``norm_w(h)^2 = |h(0)|^2 + integral |h'(x)|^2 w(x) dx,   w(x) = (1+x)^p``

with p > 3 so that sup|h| <= C * norm_w(h) holds with an explicit constant.
Derivatives are central differences, integrals are trapezoid sums, so every
operation here is deterministic for a fixed grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import BasisConstructionError, ConfigurationError, InvalidCurveError

log = logging.getLogger(__name__)

DEFAULT_EIGENVALUES = tuple(0.5 ** i for i in range(1, 9))

#: warn when the trace surrogate sum(lambda_i * norm_w(phi_i')^2) exceeds this
TRACE_SURROGATE_CAP = 1.0e3


@dataclass(frozen=True)
class SpaceConfig:
    """Grid, weight and covariance data defining the curve space."""

    w_exponent: float = 4.0
    x_max: float = 11.0
    n_x: int = 512
    basis_size: int = 8
    q_eigenvalues: tuple[float, ...] = DEFAULT_EIGENVALUES

    def __post_init__(self):
        if self.w_exponent <= 3.0:
            raise ConfigurationError(
                f"w_exponent must exceed 3 (got {self.w_exponent}); the sup-norm "
                "injection integral diverges otherwise"
            )
        if self.n_x < 2:
            raise ConfigurationError("n_x must be at least 2")
        if self.x_max <= 0.0:
            raise ConfigurationError("x_max must be positive")
        lam = np.asarray(self.q_eigenvalues, dtype=float)
        if lam.size < self.basis_size:
            raise ConfigurationError("need one eigenvalue per basis function")
        if np.any(lam <= 0.0) or np.any(np.diff(lam) > 0.0):
            raise ConfigurationError("eigenvalues must be positive and non-increasing")

    @cached_property
    def grid(self) -> np.ndarray:
        g = np.linspace(0.0, self.x_max, self.n_x)
        g.flags.writeable = False
        return g

    @property
    def dx(self) -> float:
        return self.x_max / (self.n_x - 1)

    @cached_property
    def weight(self) -> np.ndarray:
        w = (1.0 + self.grid) ** self.w_exponent
        w.flags.writeable = False
        return w

    @cached_property
    def _trapez(self) -> np.ndarray:
        w = np.full(self.n_x, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        w.flags.writeable = False
        return w

    def trapez_weights(self) -> np.ndarray:
        return self._trapez


@dataclass(frozen=True, eq=False)
class ForwardCurve:
    """A forward-rate curve sampled on the grid of its space config."""

    values: np.ndarray
    config: SpaceConfig

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.config.n_x,):
            raise InvalidCurveError(
                f"curve has {vals.shape} values, grid has {self.config.n_x} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidCurveError("curve contains non-finite values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def spot(self) -> float:
        return float(self.values[0])

    def value_at(self, x) -> np.ndarray:
        """Linear interpolation on the grid, constant beyond x_max."""
        return np.interp(x, self.config.grid, self.values)

    def __add__(self, other):
        return ForwardCurve(self.values + _vals(other), self.config)

    def __sub__(self, other):
        return ForwardCurve(self.values - _vals(other), self.config)

    def __mul__(self, scalar: float):
        return ForwardCurve(self.values * scalar, self.config)

    __rmul__ = __mul__


def _vals(curve_or_array):
    return curve_or_array.values if isinstance(curve_or_array, ForwardCurve) else curve_or_array


def flat_curve(level: float, config: SpaceConfig) -> ForwardCurve:
    return ForwardCurve(np.full(config.n_x, float(level)), config)


def grid_derivative(values: np.ndarray, config: SpaceConfig) -> np.ndarray:
    """Central differences, one-sided at the endpoints.  Works on (..., n_x)."""
    dx = config.dx
    d = np.empty_like(values, dtype=float)
    d[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dx)
    d[..., 0] = (values[..., 1] - values[..., 0]) / dx
    d[..., -1] = (values[..., -1] - values[..., -2]) / dx
    return d


def derivative(h: ForwardCurve) -> ForwardCurve:
    return ForwardCurve(grid_derivative(h.values, h.config), h.config)


def inner_w(f: ForwardCurve, g: ForwardCurve) -> float:
    """Weighted Sobolev inner product <f, g> = f(0)g(0) + int f' g' w dx."""
    cfg = f.config
    df = grid_derivative(f.values, cfg)
    dg = grid_derivative(g.values, cfg)
    quad = float(np.sum(df * dg * cfg.weight * cfg.trapez_weights()))
    return float(f.values[0] * g.values[0]) + quad


def norm_w(h: ForwardCurve) -> float:
    """Weighted Sobolev norm; deterministic for a fixed grid."""
    return float(np.sqrt(max(inner_w(h, h), 0.0)))


def norm_w_rows(values: np.ndarray, config: SpaceConfig) -> np.ndarray:
    """Vectorized norm_w over the rows of a (m, n_x) value matrix."""
    d = grid_derivative(values, config)
    quad = np.sum(d * d * config.weight * config.trapez_weights(), axis=-1)
    return np.sqrt(np.maximum(values[..., 0] ** 2 + quad, 0.0))


def sup_bound_constant(config: SpaceConfig) -> float:
    """Explicit constant C with sup|h| <= C * norm_w(h).

    Cauchy-Schwarz gives |h(x)| <= |h(0)| + (int |h'|^2 w)^(1/2) (int 1/w)^(1/2),
    hence C = sqrt(1 + int_0^inf (1+x)^(-p) dx) = sqrt(1 + 1/(p-1)).
    """
    return float(np.sqrt(1.0 + 1.0 / (config.w_exponent - 1.0)))


# ---------------------------------------------------------------------------
# shift semigroup and Yosida regularization of d/dx
# ---------------------------------------------------------------------------

def shift(h: ForwardCurve, dt: float) -> ForwardCurve:
    """Left shift h(. + dt) with constant extension beyond x_max."""
    if dt < 0.0:
        raise ValueError("shift requires dt >= 0")
    if dt == 0.0:
        return h
    cfg = h.config
    return ForwardCurve(np.interp(cfg.grid + dt, cfg.grid, h.values), cfg)


def shift_interpolant(config: SpaceConfig, dt: float):
    """Precompute (idx, lam) so that shifted = v[..., idx]*(1-lam) + v[..., idx+1]*lam.

    Samples the same linear interpolant as :func:`shift`; reused in hot loops.
    """
    grid = config.grid
    xq = grid + dt
    idx = np.minimum(np.searchsorted(grid, xq, side="right") - 1, config.n_x - 2)
    idx = np.maximum(idx, 0)
    lam = np.clip((xq - grid[idx]) / config.dx, 0.0, 1.0)
    over = xq >= config.x_max
    lam[over] = 1.0
    idx[over] = config.n_x - 2
    return idx, lam


def resolvent(h: ForwardCurve, alpha: float) -> ForwardCurve:
    """(alpha - d/dx)^{-1} h, i.e. g(x) = int_x^inf e^{-alpha(y-x)} h(y) dy.

    The integral over each grid cell is evaluated in closed form for the
    piecewise-linear interpolant of h; this stays accurate when 1/alpha drops
    below the grid spacing, where a plain trapezoid rule on the kernel fails.
    The tail beyond x_max uses the constant extension, h(x_max)/alpha.
    """
    if alpha <= 0.0:
        raise ValueError("resolvent requires alpha > 0")
    cfg = h.config
    v = h.values
    dx = cfg.dx
    decay = np.exp(-alpha * dx)
    i0 = (1.0 - decay) / alpha
    i1 = (1.0 - (1.0 + alpha * dx) * decay) / alpha ** 2
    slope = (v[1:] - v[:-1]) / dx
    cell = v[:-1] * i0 + slope * i1
    g = np.empty_like(v)
    g[-1] = v[-1] / alpha
    for j in range(cfg.n_x - 2, -1, -1):
        g[j] = cell[j] + decay * g[j + 1]
    return ForwardCurve(g, cfg)


def yosida_apply(h: ForwardCurve, alpha: float) -> ForwardCurve:
    """Bounded approximation of d/dx: alpha^2 (alpha - d/dx)^{-1} h - alpha h."""
    g = resolvent(h, alpha)
    return ForwardCurve(alpha * alpha * g.values - alpha * h.values, h.config)


# ---------------------------------------------------------------------------
# orthonormal basis and projections
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BasisSet:
    """Orthonormal curves under inner_w, with cached coefficient functionals."""

    functions: tuple[ForwardCurve, ...]
    gram_residual: float
    config: SpaceConfig
    # matrix of basis values (n_basis, n_x) and the linear functionals W with
    # <h, phi_i> = W[i] . h.values ; both derived, cached for vectorized math
    matrix: np.ndarray = field(repr=False, default=None)
    functionals: np.ndarray = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return len(self.functions)

    def coefficients(self, h: ForwardCurve, n: int | None = None) -> np.ndarray:
        n = self.size if n is None else n
        return self.functionals[:n] @ h.values

    def coefficients_of_rows(self, values: np.ndarray, n: int) -> np.ndarray:
        """(m, n_x) value rows -> (m, n) coefficient rows."""
        return values @ self.functionals[:n].T

    def synthesize(self, coeffs: np.ndarray) -> ForwardCurve:
        coeffs = np.asarray(coeffs, dtype=float)
        return ForwardCurve(coeffs @ self.matrix[: coeffs.size], self.config)

    def values_at_zero(self, n: int | None = None) -> np.ndarray:
        n = self.size if n is None else n
        return self.matrix[:n, 0].copy()


def _coefficient_functional(values: np.ndarray, config: SpaceConfig) -> np.ndarray:
    """Vector W with <h, curve> = W . h for every curve h on the same grid.

    Exploits bilinearity: <h, g> = h(0)g(0) + (Dh) . u with u = tw * w * Dg,
    so W = e0 g(0) + D^T u for the central-difference operator D.
    """
    dg = grid_derivative(values, config)
    u = dg * config.weight * config.trapez_weights()
    n = config.n_x
    dx = config.dx
    out = np.zeros(n)
    out[0] += values[0]
    # D^T u: endpoint one-sided rows plus interior central rows
    out[0] += -u[0] / dx
    out[1] += u[0] / dx
    out[-2] += -u[-1] / dx
    out[-1] += u[-1] / dx
    out[: n - 2] += -u[1:-1] / (2.0 * dx)
    out[2:] += u[1:-1] / (2.0 * dx)
    return out


def basis_generators(config: SpaceConfig) -> list[np.ndarray]:
    """Raw generators {1, e^-x, x e^-x, x^2 e^-x, ...}: smooth, decaying, in D(d/dx)."""
    x = config.grid
    gens = [np.ones_like(x)]
    for k in range(config.basis_size - 1):
        gens.append(x ** k * np.exp(-x))
    return gens


def build_basis(config: SpaceConfig) -> BasisSet:
    """Modified Gram-Schmidt (two passes) of the generators under inner_w."""
    if config.basis_size < 1:
        raise ConfigurationError("basis_size must be at least 1")
    gens = basis_generators(config)
    curves: list[ForwardCurve] = []
    for g in gens:
        cur = ForwardCurve(g, config)
        for _ in range(2):  # second pass removes round-off leakage
            for b in curves:
                cur = cur - inner_w(cur, b) * b
        nrm = norm_w(cur)
        if nrm < 1e-10:
            raise BasisConstructionError("generator is numerically dependent")
        curves.append((1.0 / nrm) * cur)
    gram = np.array([[inner_w(a, b) for b in curves] for a in curves])
    residual = float(np.max(np.abs(gram - np.eye(len(curves)))))
    if residual > 1e-6:
        raise BasisConstructionError(f"Gram residual {residual:.3e} exceeds 1e-6")
    basis = BasisSet(
        functions=tuple(curves),
        gram_residual=residual,
        config=config,
        matrix=np.array([c.values for c in curves]),
        functionals=np.array([_coefficient_functional(c.values, config) for c in curves]),
    )
    tr = trace_surrogate(basis)
    if tr > TRACE_SURROGATE_CAP:
        log.warning("trace surrogate %.3e exceeds cap %.1e", tr, TRACE_SURROGATE_CAP)
    return basis


def trace_surrogate(basis: BasisSet) -> float:
    """sum_i lambda_i norm_w(phi_i')^2, the empirical stand-in for the
    trace condition linking the covariance and the shift generator."""
    lam = np.asarray(basis.config.q_eigenvalues[: basis.size])
    return float(sum(l * norm_w(derivative(phi)) ** 2 for l, phi in zip(lam, basis.functions)))


def project(h: ForwardCurve, n: int, basis: BasisSet) -> ForwardCurve:
    """Orthogonal projection onto span{phi_1..phi_n}; idempotent."""
    if n > basis.size:
        raise ValueError(f"projection rank {n} exceeds basis size {basis.size}")
    coeffs = basis.coefficients(h, n)
    return basis.synthesize(coeffs)


# ---------------------------------------------------------------------------
# Gaussian sampling under the trace-class covariance
# ---------------------------------------------------------------------------

def sample_gaussian_coeffs(n_samples: int, n: int, config: SpaceConfig, rng) -> np.ndarray:
    """(n_samples, n) coefficient draws xi_i sqrt(lambda_i) of the centered measure."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    lam = np.asarray(config.q_eigenvalues[:n], dtype=float)
    return rng.standard_normal((n_samples, n)) * np.sqrt(lam)


def sample_gaussian(n: int, basis: BasisSet, rng) -> ForwardCurve:
    """One draw sum_i xi_i sqrt(lambda_i) phi_i; reproducible for a fixed seed."""
    if n > basis.size:
        raise ValueError(f"sample rank {n} exceeds basis size {basis.size}")
    coeffs = sample_gaussian_coeffs(1, n, basis.config, rng)[0]
    return basis.synthesize(coeffs)


# ---------------------------------------------------------------------------
# curve CSV I/O  (header "x,rate")
# ---------------------------------------------------------------------------

def read_curve_csv(path, config: SpaceConfig) -> ForwardCurve:
    """Load a curve from CSV with header ``x,rate``; resampled onto the grid
    by linear interpolation with constant extension on both sides."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None or set(map(str.lower, data.dtype.names)) != {"x", "rate"}:
        raise InvalidCurveError(f"{path}: expected CSV header 'x,rate'")
    xs = np.atleast_1d(data["x"]).astype(float)
    rs = np.atleast_1d(data["rate"]).astype(float)
    order = np.argsort(xs)
    vals = np.interp(config.grid, xs[order], rs[order])
    return ForwardCurve(vals, config)


def write_curve_csv(path, curve: ForwardCurve):
    arr = np.column_stack([curve.config.grid, curve.values])
    np.savetxt(path, arr, delimiter=",", header="x,rate", comments="")
