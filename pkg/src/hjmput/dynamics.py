"""Musiela-HJM state dynamics.

One curve-valued process drives everything: the no-arbitrage drift is
``F(h)(x) = sigma(h)(x) * int_0^x sigma(h)(y) dy`` and the mild Euler step
composes drift and noise increments with the left shift,

    ``new = shift(old + dt*F(old) + sigma(old)*dB, dt)``.

Bond prices, the spot rate and the running log-discount are read off each
path.  For state-independent volatility the scheme is linear in the Brownian
increments, so large ensembles are assembled from precomputed shift kernels
with one matrix product; the results agree with the step-by-step loop to
rounding.
"""

from __future__ import annotations

import gzip
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .curves import (
    BasisSet,
    ForwardCurve,
    SpaceConfig,
    shift,
    shift_interpolant,
)
from .errors import CapacityError, ConfigurationError, ContractError

log = logging.getLogger(__name__)

DETERMINISTIC_EXP = "deterministic-exp"
LEVEL_DEPENDENT = "level-dependent"

#: hard cap on n_paths * n_steps to keep ensembles in memory
MAX_PATH_CELLS = 200_000_000


@dataclass(frozen=True)
class VolatilityModel:
    """Volatility map into curves vanishing at long maturities.

    ``deterministic-exp``:  sigma(h)(x) = sigma0 * exp(-kappa x)  (state-free)
    ``level-dependent``:    sigma(h)(x) = sigma0 * (1 + tanh h(x))/2 * exp(-kappa x)

    c_sigma / l_sigma are the documented bound and Lipschitz constants used by
    the property suites; they are empirical-ensemble values, not proofs.
    """

    kind: str = DETERMINISTIC_EXP
    sigma0: float = 0.01
    kappa: float = 1.0
    c_sigma: float | None = None
    l_sigma: float | None = None

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC_EXP, LEVEL_DEPENDENT):
            raise ConfigurationError(f"unknown volatility kind {self.kind!r}")
        if self.sigma0 < 0.0 or self.kappa <= 0.0:
            raise ConfigurationError("need sigma0 >= 0 and kappa > 0")

    @property
    def state_independent(self) -> bool:
        return self.kind == DETERMINISTIC_EXP

    def bound_constant(self) -> float:
        # loose curve-norm bound for the deterministic kind; the level kind
        # adds a term ~ ||h||_w/2 from the tanh slope, covered per-ensemble
        return self.c_sigma if self.c_sigma is not None else 4.0 * self.sigma0

    def lipschitz_constant(self) -> float:
        # the kappa-decay contributes through the weighted derivative term, so
        # the honest constant exceeds sigma0 (a constant curve shift already
        # gives sigma0/2 * sqrt(1 + kappa^2 * int e^{-2 kappa x} w dx))
        return self.l_sigma if self.l_sigma is not None else 1.5 * self.sigma0


@dataclass(frozen=True)
class PathState:
    """Curve plus running discount along one path."""

    t: float
    curve: ForwardCurve
    accumulated_log_discount: float = 0.0


@dataclass(frozen=True)
class PricingProblem:
    """American put on the zero-coupon bond maturing with the option."""

    strike: float
    maturity: float
    valuation_time: float
    initial_curve: ForwardCurve

    def __post_init__(self):
        if not 0.0 < self.strike < 1.0:
            raise ContractError(f"strike must lie in (0,1), got {self.strike}")
        if not 0.0 <= self.valuation_time < self.maturity:
            raise ContractError("need 0 <= valuation time < maturity")


def sigma_values(values: np.ndarray, model: VolatilityModel, config: SpaceConfig) -> np.ndarray:
    """Volatility curve(s) for raw value rows (..., n_x)."""
    envelope = model.sigma0 * np.exp(-model.kappa * config.grid)
    if model.state_independent:
        return np.broadcast_to(envelope, values.shape).copy()
    return 0.5 * (1.0 + np.tanh(values)) * envelope


def sigma_of(h: ForwardCurve, model: VolatilityModel) -> ForwardCurve:
    return ForwardCurve(sigma_values(h.values, model, h.config), h.config)


def _cumulative_trapezoid(values: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(values)
    np.cumsum(0.5 * (values[..., 1:] + values[..., :-1]) * dx, axis=-1, out=out[..., 1:])
    return out


def hjm_drift_values(values: np.ndarray, model: VolatilityModel, config: SpaceConfig) -> np.ndarray:
    sig = sigma_values(values, model, config)
    return sig * _cumulative_trapezoid(sig, config.dx)


def hjm_drift(h: ForwardCurve, model: VolatilityModel) -> ForwardCurve:
    """No-arbitrage drift sigma * cumulative integral of sigma; zero at x=0."""
    return ForwardCurve(hjm_drift_values(h.values, model, h.config), h.config)


def integrate_to(curve: ForwardCurve, upto: float) -> float:
    """Trapezoid integral of the curve over [0, upto], upto <= x_max."""
    return float(curve.values @ partial_integral_weights(upto, curve.config))


def partial_integral_weights(upto: float, config: SpaceConfig) -> np.ndarray:
    """Node weights w with integral_0^upto v(x) dx = w . v (trapezoid +
    linearly interpolated partial cell)."""
    if upto < 0.0 or upto > config.x_max + 1e-12:
        raise ValueError(f"integration bound {upto} outside the grid")
    dx = config.dx
    wts = np.zeros(config.n_x)
    j = min(int(np.floor(upto / dx + 1e-12)), config.n_x - 1)
    if j > 0:
        wts[0] = 0.5 * dx
        wts[1:j] += dx
        wts[j] += 0.5 * dx
    rem = upto - j * dx
    if rem > 1e-14 and j < config.n_x - 1:
        frac = rem / dx
        # trapezoid on the partial cell with interpolated right endpoint
        wts[j] += 0.5 * rem * (2.0 - frac)
        wts[j + 1] += 0.5 * rem * frac
    return wts


def bond_price(state: PathState, maturity: float) -> float:
    """Zero-coupon bond price exp(-int_0^{T-t} curve)."""
    if state.t > maturity:
        raise ValueError("state time past bond maturity")
    return float(np.exp(-integrate_to(state.curve, maturity - state.t)))


def payoff(state: PathState, strike: float, maturity: float) -> float:
    """Put payoff [K - bond]^+, bounded by K < 1."""
    if not 0.0 < strike < 1.0:
        raise ContractError(f"strike must lie in (0,1), got {strike}")
    return max(strike - bond_price(state, maturity), 0.0)


def euler_step(state: PathState, dt: float, dB: float, model: VolatilityModel) -> PathState:
    """One mild Euler step; dB ~ N(0, dt) is supplied by the caller."""
    if dt <= 0.0:
        raise ValueError("euler_step requires dt > 0")
    cfg = state.curve.config
    vals = state.curve.values
    incremented = vals + dt * hjm_drift_values(vals, model, cfg) \
        + dB * sigma_values(vals, model, cfg)
    new_curve = shift(ForwardCurve(incremented, cfg), dt)
    spot0 = float(vals[0])
    spot1 = float(new_curve.values[0])
    ld = state.accumulated_log_discount - 0.5 * dt * (spot0 + spot1)
    return PathState(t=state.t + dt, curve=new_curve, accumulated_log_discount=ld)


# ---------------------------------------------------------------------------
# path ensembles
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PathEnsemble:
    """Per-path, per-time bond prices, spot rates and log-discounts.

    ``coords`` (optional) carries basis coefficients of each curve, shape
    (n_paths, n_times, n_coords).  Scalar tracks are stored float32 for large
    ensembles (arithmetic happens in float64); coords stay float64 because
    stopping rules difference tiny value gaps at them.
    """

    times: np.ndarray
    bond: np.ndarray
    spot: np.ndarray
    log_discount: np.ndarray
    maturity: float
    seed: int
    antithetic: bool
    coords: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.bond.shape[0]

    def dump_csv_gz(self, path):
        """Compressed CSV (path_id, t, spot, bond, log_discount)."""
        with gzip.open(path, "wt", newline="") as fh:
            fh.write("path_id,t,spot,bond,log_discount\n")
            for p in range(self.n_paths):
                for m, t in enumerate(self.times):
                    fh.write(f"{p},{t:.10g},{self.spot[p, m]:.10g},"
                             f"{self.bond[p, m]:.10g},{self.log_discount[p, m]:.10g}\n")


def simulate_paths(h0: ForwardCurve, t0: float, maturity: float, dt: float,
                   n_paths: int, model: VolatilityModel, seed: int,
                   antithetic: bool = False, basis: BasisSet | None = None,
                   n_coords: int = 0, chunk: int = 20_000,
                   threads: int = 1) -> PathEnsemble:
    """Simulate the mild Euler scheme from (t0, h0) up to the bond maturity.

    dt must divide maturity - t0 within rounding.  With ``antithetic`` the
    second half of the ensemble reuses the first half's increments negated.
    Reproducible for a fixed seed regardless of chunking or thread count:
    increments are drawn up front and chunks write disjoint slices.
    """
    if n_paths < 1:
        raise ValueError("need n_paths >= 1")
    horizon = maturity - t0
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon) or n_steps < 1:
        raise ValueError(f"dt={dt} does not divide the horizon {horizon}")
    if n_paths * n_steps > MAX_PATH_CELLS:
        raise CapacityError(f"{n_paths} paths x {n_steps} steps exceeds the cell cap")
    if antithetic and n_paths % 2 != 0:
        raise ValueError("antithetic ensembles need an even path count")

    cfg = h0.config
    if cfg.x_max < horizon + 1.0:
        raise ConfigurationError("x_max must be at least the option horizon + 1")
    rng = np.random.default_rng(seed)
    n_base = n_paths // 2 if antithetic else n_paths
    dB = rng.standard_normal((n_base, n_steps)) * np.sqrt(dt)
    if antithetic:
        dB = np.vstack([dB, -dB])

    store_dtype = np.float32 if n_paths * n_steps > 2_000_000 else np.float64
    times = t0 + dt * np.arange(n_steps + 1)

    if model.state_independent:
        bond, spot, ld, coords = _paths_from_kernels(
            h0, horizon, dt, n_steps, dB, model, basis, n_coords)
    else:
        bond, spot, ld, coords = _paths_by_stepping(
            h0, horizon, dt, n_steps, dB, model, basis, n_coords, chunk, threads)

    return PathEnsemble(
        times=times,
        bond=bond.astype(store_dtype),
        spot=spot.astype(store_dtype),
        log_discount=ld.astype(store_dtype),
        coords=coords,
        maturity=maturity,
        seed=seed,
        antithetic=antithetic,
    )


def _deterministic_skeleton(h0, horizon, dt, n_steps, model):
    """Zero-noise path and shift powers of the (fixed) volatility curve."""
    cfg = h0.config
    idx, lam = shift_interpolant(cfg, dt)

    def shift_rows(v):
        return v[..., idx] * (1.0 - lam) + v[..., idx + 1] * lam

    sig = sigma_values(h0.values, model, cfg)
    drift = hjm_drift_values(h0.values, model, cfg)  # state-free: fixed curve
    weights = [partial_integral_weights(horizon - m * dt, cfg) for m in range(n_steps + 1)]

    base = h0.values.copy()
    det_bond_exp = np.empty(n_steps + 1)
    det_spot = np.empty(n_steps + 1)
    bases = np.empty((n_steps + 1, cfg.n_x))
    det_bond_exp[0] = base @ weights[0]
    det_spot[0] = base[0]
    bases[0] = base
    for m in range(n_steps):
        base = shift_rows(base + dt * drift)
        det_bond_exp[m + 1] = base @ weights[m + 1]
        det_spot[m + 1] = base[0]
        bases[m + 1] = base

    powers = np.empty((n_steps + 1, cfg.n_x))
    powers[0] = sig
    for p in range(n_steps):
        powers[p + 1] = shift_rows(powers[p])
    return weights, bases, powers, det_bond_exp, det_spot


def _paths_from_kernels(h0, horizon, dt, n_steps, dB, model, basis, n_coords):
    """Exact restructuring of the mild Euler scheme for state-free volatility.

    The curve after m steps is  base_m + sum_{j<m} dB_j * S^(m-j) sigma  with
    S the interpolated one-step shift, so bond integrals, spots and basis
    coefficients are deterministic parts plus one matmul with the increments.
    """
    cfg = h0.config
    weights, bases, powers, det_bond_exp, det_spot = _deterministic_skeleton(
        h0, horizon, dt, n_steps, model)

    ki = np.zeros((n_steps + 1, n_steps))
    ks = np.zeros((n_steps + 1, n_steps))
    for m in range(1, n_steps + 1):
        # increment j contributes through m - j one-step shifts
        ki[m, :m] = powers[m - np.arange(m)] @ weights[m]
        ks[m, :m] = powers[m - np.arange(m), 0]

    bond_exp = det_bond_exp[None, :] + dB @ ki.T
    spot = det_spot[None, :] + dB @ ks.T
    bond = np.exp(-bond_exp)
    ld = np.zeros_like(spot)
    np.cumsum(-0.5 * dt * (spot[:, :-1] + spot[:, 1:]), axis=1, out=ld[:, 1:])

    coords = None
    if n_coords:
        fn = basis.functionals[:n_coords]
        det_c = bases @ fn.T                     # (n_steps+1, n_coords)
        kc = np.zeros((n_steps + 1, n_steps, n_coords))
        proj_powers = powers @ fn.T              # (n_steps+1, n_coords)
        for m in range(1, n_steps + 1):
            kc[m, :m] = proj_powers[m - np.arange(m)]
        coords = det_c[None] + np.einsum("pj,mjc->pmc", dB, kc, optimize=True)
    return bond, spot, ld, coords


def _paths_by_stepping(h0, horizon, dt, n_steps, dB, model, basis, n_coords,
                       chunk, threads=1):
    """Chunked step-by-step engine for state-dependent volatility.

    Chunks own disjoint output slices, so running them on a thread pool is a
    pure speed knob: numpy releases the GIL on the large array operations.
    """
    cfg = h0.config
    idx, lam = shift_interpolant(cfg, dt)
    weights = np.array([partial_integral_weights(horizon - m * dt, cfg)
                        for m in range(n_steps + 1)])
    n_paths = dB.shape[0]
    bond = np.empty((n_paths, n_steps + 1))
    spot = np.empty((n_paths, n_steps + 1))
    ld = np.zeros((n_paths, n_steps + 1))
    coords = np.empty((n_paths, n_steps + 1, n_coords)) if n_coords else None
    fn = basis.functionals[:n_coords].T if n_coords else None

    def run_chunk(lo):
        hi = min(lo + chunk, n_paths)
        vals = np.tile(h0.values, (hi - lo, 1))
        bond[lo:hi, 0] = np.exp(-(vals @ weights[0]))
        spot[lo:hi, 0] = vals[:, 0]
        if n_coords:
            coords[lo:hi, 0] = vals @ fn
        for m in range(n_steps):
            drift = hjm_drift_values(vals, model, cfg)
            sig = sigma_values(vals, model, cfg)
            vals = vals + dt * drift + dB[lo:hi, m, None] * sig
            vals = vals[:, idx] * (1.0 - lam) + vals[:, idx + 1] * lam
            bond[lo:hi, m + 1] = np.exp(-(vals @ weights[m + 1]))
            spot[lo:hi, m + 1] = vals[:, 0]
            ld[lo:hi, m + 1] = ld[lo:hi, m] - 0.5 * dt * (spot[lo:hi, m] + spot[lo:hi, m + 1])
            if n_coords:
                coords[lo:hi, m + 1] = vals @ fn

    starts = list(range(0, n_paths, chunk))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for lo in starts:
            run_chunk(lo)
    return bond, spot, ld, coords


def simulate_curves(h0: ForwardCurve, dt: float, n_steps: int, dB: np.ndarray,
                    model: VolatilityModel) -> np.ndarray:
    """Full curve evolution (n_paths, n_steps+1, n_x) for small ensembles.

    Step-by-step mild Euler; used by diagnostics that need whole curves.
    """
    cfg = h0.config
    n_paths = dB.shape[0]
    if n_paths * (n_steps + 1) * cfg.n_x > 400_000_000:
        raise CapacityError("curve storage for this ensemble exceeds the cap")
    idx, lam = shift_interpolant(cfg, dt)
    out = np.empty((n_paths, n_steps + 1, cfg.n_x))
    vals = np.tile(h0.values, (n_paths, 1))
    out[:, 0] = vals
    for m in range(n_steps):
        drift = hjm_drift_values(vals, model, cfg)
        sig = sigma_values(vals, model, cfg)
        vals = vals + dt * drift + dB[:, m, None] * sig
        vals = vals[:, idx] * (1.0 - lam) + vals[:, idx + 1] * lam
        out[:, m + 1] = vals
    return out
