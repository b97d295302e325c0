"""Finite-dimensional obstacle problem for the reduced pricing dynamics.

The put value on n coordinates (n = 1 or 2) solves the complementarity system

    max{ dV/dt + L V - rho(z) V ,  Psi_k - V } = 0,   V(T) = Psi_k(T),

on a truncated box with Dirichlet value = obstacle on the edge.  Backward
Crank-Nicolson in time (implicit-Euler half-steps at startup to damp the
payoff kink), each step solved by projected SOR onto {V >= Psi_k} with
red-black sweeps.  The first-order term is upwinded wherever the cell Peclet
number exceeds 2, keeping the step matrix an M-matrix.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .curves import BasisSet, ForwardCurve
from .dynamics import PricingProblem
from .errors import ExtrapolationError, SolverError, UnsupportedDimensionError
from .galerkin import EffectiveCoefficients
from .smoothing import smoothed_kernel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PdeGrid:
    """Symmetric box [-H, H]^n with n_state nodes per axis, n_time steps."""

    n_dims: int
    half_width: float
    n_state: int
    n_time: int
    t0: float
    maturity: float
    rannacher_steps: int = 1

    def __post_init__(self):
        if self.n_dims not in (1, 2):
            raise UnsupportedDimensionError("PDE grids support 1 or 2 dimensions")
        if self.n_state < 5 or self.n_time < 1:
            raise ValueError("grid too small")
        if not self.t0 < self.maturity:
            raise ValueError("need t0 < maturity")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_state)

    @property
    def dz(self) -> float:
        return 2.0 * self.half_width / (self.n_state - 1)

    @property
    def dt(self) -> float:
        # n_time * dt recovers the horizon exactly
        return (self.maturity - self.t0) / self.n_time

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_time + 1)

    def mesh(self):
        if self.n_dims == 1:
            return (self.axis,)
        return np.meshgrid(self.axis, self.axis, indexing="ij")


@dataclass(eq=False)
class DiscreteOperator:
    """Stencil form of L - rho on the grid interior (generator minus discount)."""

    grid: PdeGrid
    diag: np.ndarray
    east: np.ndarray
    west: np.ndarray
    north: np.ndarray | None = None
    south: np.ndarray | None = None
    cross: np.ndarray | None = None
    upwinded_fraction: float = 0.0

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Operator action; zero outside the interior."""
        out = np.zeros_like(v)
        if self.grid.n_dims == 1:
            out[1:-1] = (self.west[1:-1] * v[:-2] + self.diag[1:-1] * v[1:-1]
                         + self.east[1:-1] * v[2:])
        else:
            out[1:-1, 1:-1] = (
                self.west[1:-1, 1:-1] * v[:-2, 1:-1]
                + self.east[1:-1, 1:-1] * v[2:, 1:-1]
                + self.south[1:-1, 1:-1] * v[1:-1, :-2]
                + self.north[1:-1, 1:-1] * v[1:-1, 2:]
                + self.diag[1:-1, 1:-1] * v[1:-1, 1:-1]
                + self.cross[1:-1, 1:-1] * (v[2:, 2:] - v[2:, :-2]
                                            - v[:-2, 2:] + v[:-2, :-2])
            )
        return out

    def offdiag_apply(self, v: np.ndarray) -> np.ndarray:
        """Like apply() but without the diagonal term (for SOR sweeps)."""
        out = self.apply(v)
        if self.grid.n_dims == 1:
            out[1:-1] -= self.diag[1:-1] * v[1:-1]
        else:
            out[1:-1, 1:-1] -= self.diag[1:-1, 1:-1] * v[1:-1, 1:-1]
        return out


def _axis_stencil(diff, drift, dz):
    """Central coefficients with Peclet-triggered upwinding; returns
    (lower, upper, diag_contribution, n_upwinded)."""
    pe = np.abs(drift) * dz / np.maximum(diff, 1e-300)
    central = pe <= 2.0
    lower = np.where(central, diff / dz ** 2 - drift / (2.0 * dz), 0.0)
    upper = np.where(central, diff / dz ** 2 + drift / (2.0 * dz), 0.0)
    dcontrib = np.where(central, -2.0 * diff / dz ** 2, 0.0)
    up = ~central
    pos = up & (drift > 0.0)
    neg = up & ~pos
    lower = np.where(pos, diff / dz ** 2, lower)
    upper = np.where(pos, diff / dz ** 2 + drift / dz, upper)
    dcontrib = np.where(pos, -2.0 * diff / dz ** 2 - drift / dz, dcontrib)
    lower = np.where(neg, diff / dz ** 2 - drift / dz, lower)
    upper = np.where(neg, diff / dz ** 2, upper)
    dcontrib = np.where(neg, -2.0 * diff / dz ** 2 + drift / dz, dcontrib)
    return lower, upper, dcontrib, int(np.sum(up))


def build_operator(coeffs: EffectiveCoefficients, grid: PdeGrid) -> DiscreteOperator:
    """Discretize (1/2)(s s^T + eps^2 I) D^2 + b . D - rho on the grid."""
    if grid.n_dims != coeffs.n:
        raise ValueError("grid dimension does not match the coefficient bundle")
    eps2 = coeffs.epsilon ** 2
    if grid.n_dims == 1:
        z = grid.axis[:, None]
        s = coeffs.vol_row(z)[:, 0]
        b = coeffs.drift(z)[:, 0]
        rho = coeffs.rho(z)
        diff = 0.5 * (s * s + eps2)
        if not np.all(diff >= 0.0):
            raise SolverError("negative or non-finite diffusion after assembly")
        lo, up, dct, n_up = _axis_stencil(diff, b, grid.dz)
        diag = dct - rho
        frac = n_up / grid.n_state
        if frac:
            log.debug("upwinded %.1f%% of nodes", 100 * frac)
        return DiscreteOperator(grid=grid, diag=diag, west=lo, east=up,
                                upwinded_fraction=frac)

    z1, z2 = grid.mesh()
    pts = np.stack([z1, z2], axis=-1)
    s = coeffs.vol_row(pts)
    b = coeffs.drift(pts)
    rho = coeffs.rho(pts)
    c11 = 0.5 * (s[..., 0] ** 2 + eps2)
    c22 = 0.5 * (s[..., 1] ** 2 + eps2)
    c12 = s[..., 0] * s[..., 1]
    if not (np.all(c11 >= 0.0) and np.all(c22 >= 0.0)):
        raise SolverError("negative or non-finite diffusion after assembly")
    w1, e1, d1, nu1 = _axis_stencil(c11, b[..., 0], grid.dz)
    s2, n2, d2, nu2 = _axis_stencil(c22, b[..., 1], grid.dz)
    diag = d1 + d2 - rho
    cross = c12 / (4.0 * grid.dz ** 2)
    frac = (nu1 + nu2) / (2 * grid.n_state ** 2)
    return DiscreteOperator(grid=grid, diag=diag, west=w1, east=e1,
                            south=s2, north=n2, cross=cross,
                            upwinded_fraction=frac)


def make_obstacle(problem: PricingProblem, coeffs: EffectiveCoefficients,
                  grid: PdeGrid, k: int):
    """Smoothed payoff on the grid as a function of time,
    Psi_k(t, z) = g_k(K - exp(-sum_i z_i J_i(T - t)))."""
    kern = smoothed_kernel(int(k)) if k is not None else None
    mesh = grid.mesh()

    def obstacle(t: float) -> np.ndarray:
        load = coeffs.bond_loadings(problem.maturity - t)
        expo = sum(mesh[i] * load[i] for i in range(grid.n_dims))
        raw = problem.strike - np.exp(-expo)
        if kern is None:
            return np.maximum(raw, 0.0)
        return kern.g(raw)

    return obstacle


@dataclass(eq=False)
class ValueSurface:
    """Solved value lattice with its obstacle, exercise mask and diagnostics."""

    grid: PdeGrid
    times: np.ndarray
    values: np.ndarray          # (n_time+1, n_state[, n_state])
    obstacle: np.ndarray        # same shape
    exercise_mask: np.ndarray   # bool, same shape
    max_complementarity: float  # max over nodes/steps of (V - psi) * |residual|
    max_residual_violation: float  # most negative step residual seen
    psor_iterations: int
    boundary: np.ndarray = field(default=None)  # 1-d: first binding z with payoff > 0

    @property
    def n_dims(self) -> int:
        return self.grid.n_dims

    def slice_at(self, t: float, arr: np.ndarray | None = None) -> np.ndarray:
        """Time-interpolated lattice slice (of values by default)."""
        arr = self.values if arr is None else arr
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ExtrapolationError(f"time {t} outside [{times[0]}, {times[-1]}]")
        j = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        lam = np.clip((t - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0)
        return (1.0 - lam) * arr[j] + lam * arr[j + 1]

    def interp_coords(self, t: float, coords: np.ndarray,
                      arr: np.ndarray | None = None) -> np.ndarray:
        """Interpolate a lattice quantity at coordinate points (m, n_dims)."""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        H = self.grid.half_width
        if np.any(np.abs(coords) > H + 1e-12):
            worst = float(np.max(np.abs(coords)))
            raise ExtrapolationError(
                f"coordinate magnitude {worst:.6g} outside the domain [-{H}, {H}]; "
                "values are never clamped")
        sl = self.slice_at(t, arr)
        axis = self.grid.axis
        if self.n_dims == 1:
            return np.interp(coords[:, 0], axis, sl)
        return _bilinear(axis, sl, coords[:, 0], coords[:, 1])

    def price(self, t: float, coords) -> float:
        return float(self.interp_coords(t, np.atleast_2d(coords))[0])


def _bilinear(axis, table, x, y):
    dz = axis[1] - axis[0]
    ix = np.clip(((x - axis[0]) / dz).astype(int), 0, len(axis) - 2)
    iy = np.clip(((y - axis[0]) / dz).astype(int), 0, len(axis) - 2)
    fx = (x - axis[ix]) / dz
    fy = (y - axis[iy]) / dz
    return ((1 - fx) * (1 - fy) * table[ix, iy] + fx * (1 - fy) * table[ix + 1, iy]
            + (1 - fx) * fy * table[ix, iy + 1] + fx * fy * table[ix + 1, iy + 1])


def _interior_masks(grid: PdeGrid):
    if grid.n_dims == 1:
        n = grid.n_state
        return np.arange(1, n - 1, 2), np.arange(2, n - 1, 2)
    n = grid.n_state
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    interior = np.zeros((n, n), dtype=bool)
    interior[1:-1, 1:-1] = True
    return ((ii + jj) % 2 == 0) & interior, ((ii + jj) % 2 == 1) & interior


def psor_solve(operator: DiscreteOperator, obstacle, grid: PdeGrid,
               omega: float = 1.5, tol: float = 1e-9, max_iterations: int = 10_000,
               obstacle_active: bool = True) -> ValueSurface:
    """March the obstacle problem backward from maturity.

    ``obstacle`` maps a time to the payoff lattice.  Crank-Nicolson steps with
    ``grid.rannacher_steps`` leading steps split into implicit-Euler halves;
    each step's LCP is solved by projected SOR (plain SOR when the obstacle is
    disabled, which prices the European control from the same operator).
    """
    if not 0.0 < omega < 2.0:
        raise ValueError("SOR relaxation must satisfy 0 < omega < 2")
    times = grid.times
    n_slices = grid.n_time + 1
    shape = (grid.n_state,) if grid.n_dims == 1 else (grid.n_state, grid.n_state)
    values = np.empty((n_slices,) + shape)
    obstacles = np.empty_like(values)
    for m, t in enumerate(times):
        obstacles[m] = obstacle(float(t))
    values[-1] = obstacles[-1]

    sweep_a, sweep_b = _interior_masks(grid)
    max_comp = 0.0
    max_neg = 0.0
    iters_total = 0

    v = values[-1].copy()
    for m in range(grid.n_time - 1, -1, -1):
        step_index = grid.n_time - 1 - m  # 0 for the step leaving maturity
        if step_index < grid.rannacher_steps:
            substeps = [(1.0, 0.5 * grid.dt), (1.0, 0.5 * grid.dt)]
        else:
            substeps = [(0.5, grid.dt)]
        t_new = times[m + 1]
        for theta, d in substeps:
            t_new = t_new - d
            psi = obstacle(float(t_new)) if abs(t_new - times[m]) > 1e-12 else obstacles[m]
            rhs = v + d * (1.0 - theta) * operator.apply(v) if theta < 1.0 else v.copy()
            adiag = 1.0 - d * theta * operator.diag
            vn = np.maximum(v, psi) if obstacle_active else v.copy()
            _set_boundary(vn, psi, grid)
            dth = d * theta
            for _ in range(max_iterations):
                delta = 0.0
                for mask in (sweep_a, sweep_b):
                    off = operator.offdiag_apply(vn)
                    gauss = (rhs + dth * off) / adiag
                    cand = (1.0 - omega) * vn + omega * gauss
                    if obstacle_active:
                        cand = np.maximum(cand, psi)
                    if grid.n_dims == 1:
                        change = np.max(np.abs(cand[mask] - vn[mask]), initial=0.0)
                        vn[mask] = cand[mask]
                    else:
                        change = np.max(np.abs(np.where(mask, cand - vn, 0.0)))
                        vn = np.where(mask, cand, vn)
                    delta = max(delta, float(change))
                iters_total += 1
                if delta < tol:
                    break
            else:
                raise SolverError(
                    f"projected SOR exceeded {max_iterations} iterations at t={t_new:.6g} "
                    f"(last update {delta:.3e}, tol {tol:.1e})")
            # complementarity report on the interior
            resid = vn - dth * (operator.apply(vn)) - rhs
            inner = (slice(1, -1),) * grid.n_dims
            r_in = resid[inner]
            if obstacle_active:
                gap = (vn - psi)[inner]
                max_comp = max(max_comp, float(np.max(np.abs(gap * r_in), initial=0.0)))
                max_neg = min(max_neg, float(np.min(r_in, initial=0.0)))
            else:
                max_comp = max(max_comp, float(np.max(np.abs(r_in), initial=0.0)))
            v = vn
        values[m] = v

    mask = values <= obstacles + 1e-12 if obstacle_active else np.zeros_like(values, bool)
    boundary = None
    if grid.n_dims == 1:
        # trace the genuine free boundary: binding nodes with positive payoff
        # (deep out of the money V = psi = 0 holds vacuously, as do the
        # Dirichlet edges)
        axis = grid.axis
        boundary = np.full(n_slices, np.nan)
        for m in range(n_slices):
            hit = np.nonzero(mask[m] & (obstacles[m] > 0.0))[0]
            if hit.size:
                boundary[m] = axis[hit[0]]
    return ValueSurface(grid=grid, times=times, values=values, obstacle=obstacles,
                        exercise_mask=mask, max_complementarity=max_comp,
                        max_residual_violation=max_neg, psor_iterations=iters_total,
                        boundary=boundary)


def _set_boundary(v, psi, grid):
    if grid.n_dims == 1:
        v[0], v[-1] = psi[0], psi[-1]
    else:
        v[0, :], v[-1, :] = psi[0, :], psi[-1, :]
        v[:, 0], v[:, -1] = psi[:, 0], psi[:, -1]


def value_at(surface: ValueSurface, t: float, h: ForwardCurve, basis: BasisSet) -> float:
    """Project the curve onto the surface's coordinates and interpolate."""
    coords = basis.coefficients(h, surface.n_dims)
    return surface.price(t, coords)


@dataclass(eq=False)
class ExerciseRule:
    """Stop at the first time the interpolated value meets the obstacle.

    Both surfaces are interpolated on the same lattice, so on exercised cells
    the gap vanishes identically and the rule is robust to payoff curvature.
    Far out of the money the gap also closes (value and payoff both vanish);
    stopping there is harmless for stopped-value accounting since the carried
    value is the same zero either way.
    """

    surface: ValueSurface
    tol_gap: float

    def gap(self, t: float, coords: np.ndarray) -> np.ndarray:
        v = self.surface.interp_coords(t, coords)
        p = self.surface.interp_coords(t, coords, self.surface.obstacle)
        return v - p

    def should_stop(self, t: float, coords: np.ndarray) -> np.ndarray:
        if t >= self.surface.times[-1] - 1e-12:
            return np.ones(np.atleast_2d(coords).shape[0], dtype=bool)
        return self.gap(t, coords) <= self.tol_gap

    def first_stop_indices(self, times: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Per-path index of the first stopping time.

        coords has shape (n_paths, n_times, n_dims); times must lie inside the
        surface's span.  The final time always stops.
        """
        n_paths, n_times = coords.shape[0], coords.shape[1]
        out = np.full(n_paths, n_times - 1, dtype=int)
        alive = np.ones(n_paths, dtype=bool)
        for m in range(n_times):
            if not np.any(alive):
                break
            stop = self.should_stop(float(times[m]), coords[alive, m, :])
            hit = np.nonzero(alive)[0][stop]
            out[hit] = m
            alive[hit] = False
        return out

    @property
    def boundary(self) -> np.ndarray:
        return self.surface.boundary


def exercise_rule(surface: ValueSurface, tol_gap: float) -> ExerciseRule:
    return ExerciseRule(surface=surface, tol_gap=tol_gap)


def export_surface_csv(surface: ValueSurface, path):
    """CSV dump (t, z..., value, obstacle, exercised)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if surface.n_dims == 1:
            wr.writerow(["t", "z", "value", "obstacle", "exercised"])
            for m, t in enumerate(surface.times):
                for j, z in enumerate(surface.grid.axis):
                    wr.writerow([f"{t:.10g}", f"{z:.10g}",
                                 f"{surface.values[m, j]:.12g}",
                                 f"{surface.obstacle[m, j]:.12g}",
                                 int(surface.exercise_mask[m, j])])
        else:
            wr.writerow(["t", "z1", "z2", "value", "obstacle", "exercised"])
            axis = surface.grid.axis
            for m, t in enumerate(surface.times):
                for i, a in enumerate(axis):
                    for j, b in enumerate(axis):
                        wr.writerow([f"{t:.10g}", f"{a:.10g}", f"{b:.10g}",
                                     f"{surface.values[m, i, j]:.12g}",
                                     f"{surface.obstacle[m, i, j]:.12g}",
                                     int(surface.exercise_mask[m, i, j])])
