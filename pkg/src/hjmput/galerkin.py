"""Yosida-regularized and spectrally reduced state dynamics.

Two reductions feed the finite-dimensional pricer:

* the unbounded shift generator is replaced by its bounded Yosida
  regularization, turning the mild equation into a strong SDE, and
* the state is projected onto span{phi_1..phi_n}, with an extra noise floor
  eps_n = eps0 / n on each coordinate (so sqrt(n) eps_n -> 0) that keeps the
  reduced problem uniformly parabolic.

Coordinates are taken with the weighted inner product, using the same
quadrature convention as the curve space throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .curves import (
    BasisSet,
    ForwardCurve,
    SpaceConfig,
    yosida_apply,
)
from .dynamics import (
    PathState,
    VolatilityModel,
    hjm_drift,
    hjm_drift_values,
    sigma_values,
)
from .errors import UnsupportedDimensionError

DEFAULT_EPSILON0 = 2.0e-3
PDE_MAX_DIM = 2


def yosida_step(state: PathState, dt: float, dB: float, alpha: float,
                model: VolatilityModel) -> PathState:
    """Strong Euler step of the Yosida-regularized SDE (no shift applied)."""
    if dt < 0.0:
        raise ValueError("yosida_step requires dt >= 0")
    if alpha <= 0.0:
        raise ValueError("yosida_step requires alpha > 0")
    if dt == 0.0:
        return state
    curve = state.curve
    cfg = curve.config
    gen = yosida_apply(curve, alpha)
    drift = hjm_drift(curve, model)
    sig = sigma_values(curve.values, model, cfg)
    new_vals = curve.values + dt * (gen.values + drift.values) + dB * sig
    new_curve = ForwardCurve(new_vals, cfg)
    ld = state.accumulated_log_discount - 0.5 * dt * (curve.values[0] + new_vals[0])
    return PathState(t=state.t + dt, curve=new_curve, accumulated_log_discount=ld)


@dataclass(frozen=True, eq=False)
class GalerkinModel:
    """Reduced dynamics on n basis coordinates with Yosida parameter alpha."""

    n: int
    alpha: float
    basis: BasisSet
    vol: VolatilityModel
    epsilon0: float = DEFAULT_EPSILON0

    def __post_init__(self):
        if self.n < 1 or self.n > self.basis.size:
            raise ValueError(f"dimension {self.n} outside 1..{self.basis.size}")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")

    @property
    def epsilon_n(self) -> float:
        """Noise floor eps0 / n; sqrt(n) * eps_n -> 0 along any n schedule."""
        return self.epsilon0 / self.n

    @property
    def config(self) -> SpaceConfig:
        return self.basis.config

    @cached_property
    def generator_matrix(self) -> np.ndarray:
        """M[i, j] = <A_alpha phi_j, phi_i>_w (vanishes on constants)."""
        n = self.n
        mat = np.empty((n, n))
        for j in range(n):
            img = yosida_apply(self.basis.functions[j], self.alpha)
            mat[:, j] = self.basis.functionals[:n] @ img.values
        return mat

    @cached_property
    def rho_weights(self) -> np.ndarray:
        """Spot rate of the reconstructed curve: rho(z) = sum z_i phi_i(0)."""
        return self.basis.values_at_zero(self.n)

    def reconstruct(self, coeffs: np.ndarray) -> ForwardCurve:
        return self.basis.synthesize(np.asarray(coeffs, dtype=float)[: self.n])

    def vol_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """<sigma(h_n), phi_i>_w at the reconstructed state h_n."""
        curve = self.reconstruct(coeffs)
        sig = sigma_values(curve.values, self.vol, self.config)
        return self.basis.functionals[: self.n] @ sig

    def drift_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Projected Yosida transport plus projected no-arbitrage drift."""
        coeffs = np.asarray(coeffs, dtype=float)[: self.n]
        curve = self.reconstruct(coeffs)
        f = hjm_drift_values(curve.values, self.vol, self.config)
        return self.generator_matrix @ coeffs + self.basis.functionals[: self.n] @ f

    def rho(self, coeffs: np.ndarray) -> float:
        return float(self.rho_weights @ np.asarray(coeffs, dtype=float)[: self.n])


def galerkin_step(coeffs: np.ndarray, dt: float, dB0: float, dB_extra: np.ndarray,
                  model: GalerkinModel) -> np.ndarray:
    """Euler step of the reduced SDE in basis coordinates.

    dB0 drives the projected volatility, dB_extra (length n) the coordinate
    noise floor; all increments ~ N(0, dt) are supplied by the caller.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    dB_extra = np.asarray(dB_extra, dtype=float)
    if coeffs.shape != (model.n,) or dB_extra.shape != (model.n,):
        raise ValueError(f"expected coefficient/noise vectors of length {model.n}")
    if dt <= 0.0:
        raise ValueError("galerkin_step requires dt > 0")
    return (coeffs + dt * model.drift_coeffs(coeffs)
            + dB0 * model.vol_coeffs(coeffs) + model.epsilon_n * dB_extra)


def simulate_galerkin(z0: np.ndarray, dt: float, n_steps: int, n_paths: int,
                      model: GalerkinModel, seed: int):
    """Coordinate-SDE ensemble: returns (coords, log_discount) arrays.

    coords has shape (n_paths, n_steps+1, n); the discount integrates the
    reconstructed spot rho(z) with the trapezoid rule, as on full paths.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    z0 = np.asarray(z0, dtype=float)
    coords = np.empty((n_paths, n_steps + 1, n))
    coords[:, 0] = z0
    ld = np.zeros((n_paths, n_steps + 1))
    state_free = model.vol.state_independent
    if state_free:
        svec = model.vol_coeffs(z0)
        fvec = (model.basis.functionals[:n]
                @ hjm_drift_values(model.reconstruct(z0).values, model.vol, model.config))
    for m in range(n_steps):
        z = coords[:, m]
        dB0 = rng.standard_normal(n_paths) * np.sqrt(dt)
        dBe = rng.standard_normal((n_paths, n)) * np.sqrt(dt)
        if state_free:
            drift = z @ model.generator_matrix.T + fvec
            vol = np.outer(dB0, svec)
        else:
            drift = np.array([model.drift_coeffs(zi) for zi in z])
            vol = dB0[:, None] * np.array([model.vol_coeffs(zi) for zi in z])
        coords[:, m + 1] = z + dt * drift + vol + model.epsilon_n * dBe
        spot0 = z @ model.rho_weights
        spot1 = coords[:, m + 1] @ model.rho_weights
        ld[:, m + 1] = ld[:, m] - 0.5 * dt * (spot0 + spot1)
    return coords, ld


@dataclass(frozen=True, eq=False)
class EffectiveCoefficients:
    """Drift, volatility row, noise floor and discount rate on coordinates,
    packaged for the PDE assembly.  Only n in {1, 2} is supported there."""

    model: GalerkinModel
    bond_loadings: object  # callable s -> n-vector of int_0^s phi_i(x) dx

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def epsilon(self) -> float:
        return self.model.epsilon_n

    @cached_property
    def _const_f(self) -> np.ndarray:
        # projected no-arbitrage drift; state-free when the volatility is
        flat0 = np.zeros(self.model.config.n_x)
        f = hjm_drift_values(flat0, self.model.vol, self.model.config)
        return self.model.basis.functionals[: self.n] @ f

    @cached_property
    def _const_vol(self) -> np.ndarray:
        return self.model.vol_coeffs(np.zeros(self.n))

    def drift(self, z: np.ndarray) -> np.ndarray:
        """Vectorized drift over points z of shape (..., n)."""
        z = np.asarray(z, dtype=float)
        if self.model.vol.state_independent:
            return z @ self.model.generator_matrix.T + self._const_f
        flat = z.reshape(-1, self.n)
        out = np.array([self.model.drift_coeffs(p) for p in flat])
        return out.reshape(z.shape)

    def vol_row(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.model.vol.state_independent:
            return np.broadcast_to(self._const_vol, z.shape).copy()
        flat = z.reshape(-1, self.n)
        out = np.array([self.model.vol_coeffs(p) for p in flat])
        return out.reshape(z.shape)

    def rho(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.model.rho_weights


def effective_coefficients(n: int, alpha: float, vol: VolatilityModel,
                           basis: BasisSet, epsilon0: float = DEFAULT_EPSILON0
                           ) -> EffectiveCoefficients:
    """Coefficient bundle for the n-dimensional pricing PDE (n in {1, 2})."""
    if n > PDE_MAX_DIM:
        raise UnsupportedDimensionError(f"PDE solves support n <= {PDE_MAX_DIM}, got {n}")
    model = GalerkinModel(n=n, alpha=alpha, basis=basis, vol=vol, epsilon0=epsilon0)
    cfg = basis.config
    cumint = np.cumsum(
        np.concatenate([np.zeros((n, 1)),
                        0.5 * (basis.matrix[:n, 1:] + basis.matrix[:n, :-1]) * cfg.dx],
                       axis=1), axis=1)

    def bond_loadings(s: float) -> np.ndarray:
        """int_0^s phi_i(x) dx for each basis function, by interpolation."""
        return np.array([np.interp(s, cfg.grid, cumint[i]) for i in range(n)])

    return EffectiveCoefficients(model=model, bond_loadings=bond_loadings)
