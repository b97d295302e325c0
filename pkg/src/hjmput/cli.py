"""Batch front door: pricing runs, convergence studies, property suites.

One TOML config file drives everything; flags override file values.  Every
run is reproducible from (config, seed) and reports omit wall-clock data, so
identical inputs produce byte-identical outputs.

Exit codes: 0 ok, 1 property failure, 2 config/IO error, 3 convergence-trend
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from xml.etree import ElementTree as ET

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import curves, dynamics, galerkin, lsmc, pde, smoothing
from .errors import ConfigurationError, HjmPutError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_TREND = 3
EXIT_USAGE = 64

K_SCHEDULE = (4, 16, 64, 256)
ALPHA_SCHEDULE = (10.0, 50.0, 250.0)
N_SCHEDULE = (1, 2)


class UsageError(Exception):
    pass


class TrendError(Exception):
    pass


class PropertyError(Exception):
    pass


@dataclass
class RunConfig:
    """Validated, flattened run configuration (see README for the schema)."""

    seed: int = 42
    # contract
    strike: float = 0.92
    maturity: float = 1.0
    valuation_time: float = 0.0
    # initial curve
    curve_kind: str = "flat"
    curve_level: float = 0.10
    curve_path: str | None = None
    ns_beta0: float = 0.05
    ns_beta1: float = -0.02
    ns_beta2: float = 0.01
    ns_tau: float = 1.0
    # volatility model
    model_kind: str = dynamics.DETERMINISTIC_EXP
    sigma0: float = 0.01
    kappa: float = 1.0
    # curve space
    w_exponent: float = 4.0
    x_max: float | None = None  # defaults to maturity + 10
    n_x: int = 512
    basis_size: int = 8
    eigenvalue_decay: float = 0.5
    # approximation chain
    k: int = 256
    alpha: float = 250.0
    n: int = 1
    epsilon0: float = galerkin.DEFAULT_EPSILON0
    # pde grid / solver
    half_width: float = 0.5
    n_state: int = 401
    n_time: int = 200
    omega: float = 1.5
    sor_tol: float = 1e-9
    max_iterations: int = 10_000
    rannacher_steps: int = 1
    tol_gap_factor: float = 1e-6
    # monte carlo
    n_paths: int = 100_000
    n_steps: int = 200
    degree: int = 3
    antithetic: bool = True
    diagnostic_paths: int = 20_000
    # output
    out_dir: str = "out"
    threads: int = 1
    dump_paths: bool = False

    def __post_init__(self):
        if self.x_max is None:
            self.x_max = self.maturity + 10.0
        if not 0.0 < self.strike < 1.0:
            raise ConfigurationError("contract.strike must lie in (0,1)")
        if not 0.0 <= self.valuation_time < self.maturity:
            raise ConfigurationError("need 0 <= valuation_time < maturity")
        if self.x_max < self.maturity + 1.0:
            raise ConfigurationError("space.x_max must be at least maturity + 1")
        if self.curve_kind not in ("flat", "csv", "nelson-siegel"):
            raise ConfigurationError(f"unknown curve kind {self.curve_kind!r}")
        if self.curve_kind == "csv":
            if not self.curve_path:
                raise ConfigurationError("curve.kind = 'csv' needs curve.path")
            if not Path(self.curve_path).exists():
                raise ConfigurationError(f"curve file not found: {self.curve_path}")
        if not 0.0 < self.eigenvalue_decay < 1.0:
            raise ConfigurationError("space.eigenvalue_decay must lie in (0,1)")

    # ---- section mapping ------------------------------------------------
    _SECTIONS = {
        "contract": {"strike": "strike", "maturity": "maturity",
                     "valuation_time": "valuation_time"},
        "curve": {"kind": "curve_kind", "level": "curve_level", "path": "curve_path",
                  "beta0": "ns_beta0", "beta1": "ns_beta1", "beta2": "ns_beta2",
                  "tau": "ns_tau"},
        "model": {"kind": "model_kind", "sigma0": "sigma0", "kappa": "kappa"},
        "space": {"w_exponent": "w_exponent", "x_max": "x_max", "n_x": "n_x",
                  "basis_size": "basis_size", "eigenvalue_decay": "eigenvalue_decay"},
        "chain": {"k": "k", "alpha": "alpha", "n": "n", "epsilon0": "epsilon0"},
        "pde": {"half_width": "half_width", "n_state": "n_state", "n_time": "n_time",
                "omega": "omega", "sor_tol": "sor_tol",
                "max_iterations": "max_iterations",
                "rannacher_steps": "rannacher_steps",
                "tol_gap_factor": "tol_gap_factor"},
        "mc": {"n_paths": "n_paths", "n_steps": "n_steps", "degree": "degree",
               "antithetic": "antithetic", "diagnostic_paths": "diagnostic_paths"},
        "output": {"directory": "out_dir"},
    }

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config parse error: {exc}") from exc
        kwargs = {}
        if "seed" in raw:
            kwargs["seed"] = int(raw["seed"])
        for section, mapping in cls._SECTIONS.items():
            body = raw.get(section, {})
            if not isinstance(body, dict):
                raise ConfigurationError(f"[{section}] must be a table")
            for key, val in body.items():
                if key not in mapping:
                    raise ConfigurationError(f"unknown key {section}.{key}")
                kwargs[mapping[key]] = val
        return cls(**kwargs)

    def config_hash(self) -> str:
        payload = asdict(self)
        for delivery_knob in ("out_dir", "threads", "dump_paths"):
            payload.pop(delivery_knob)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # ---- factories -------------------------------------------------------
    def space(self) -> curves.SpaceConfig:
        lam = tuple(self.eigenvalue_decay ** i for i in range(1, self.basis_size + 1))
        return curves.SpaceConfig(w_exponent=self.w_exponent, x_max=self.x_max,
                                  n_x=self.n_x, basis_size=self.basis_size,
                                  q_eigenvalues=lam)

    def vol_model(self) -> dynamics.VolatilityModel:
        return dynamics.VolatilityModel(kind=self.model_kind, sigma0=self.sigma0,
                                        kappa=self.kappa)

    def initial_curve(self, space: curves.SpaceConfig) -> curves.ForwardCurve:
        if self.curve_kind == "flat":
            return curves.flat_curve(self.curve_level, space)
        if self.curve_kind == "csv":
            return curves.read_curve_csv(self.curve_path, space)
        x = space.grid
        decay = np.exp(-x / self.ns_tau)
        vals = self.ns_beta0 + self.ns_beta1 * decay + self.ns_beta2 * (x / self.ns_tau) * decay
        return curves.ForwardCurve(vals, space)

    def problem(self, space: curves.SpaceConfig) -> dynamics.PricingProblem:
        return dynamics.PricingProblem(strike=self.strike, maturity=self.maturity,
                                       valuation_time=self.valuation_time,
                                       initial_curve=self.initial_curve(space))

    def pde_grid(self, n_dims: int | None = None, n_state: int | None = None,
                 n_time: int | None = None) -> pde.PdeGrid:
        return pde.PdeGrid(n_dims=self.n if n_dims is None else n_dims,
                           half_width=self.half_width,
                           n_state=self.n_state if n_state is None else n_state,
                           n_time=self.n_time if n_time is None else n_time,
                           t0=self.valuation_time, maturity=self.maturity,
                           rannacher_steps=self.rannacher_steps)

    def lsmc_config(self, n_paths: int | None = None, seed: int | None = None
                    ) -> lsmc.LsmcConfig:
        return lsmc.LsmcConfig(n_paths=self.n_paths if n_paths is None else n_paths,
                               n_steps=self.n_steps, degree=self.degree,
                               seed=self.seed if seed is None else seed,
                               antithetic=self.antithetic, threads=self.threads)


# ---------------------------------------------------------------------------
# pricing pipeline pieces shared by subcommands
# ---------------------------------------------------------------------------

def solve_chain(config: RunConfig, *, k: int | None = None,
                alpha: float | None = None, n: int | None = None,
                n_state: int | None = None, n_time: int | None = None):
    """End-to-end PDE solve for the configured problem; returns
    (surface, coeffs, basis, problem, price)."""
    space = config.space()
    basis = curves.build_basis(space)
    problem = config.problem(space)
    vol = config.vol_model()
    n = config.n if n is None else n
    coeffs = galerkin.effective_coefficients(
        n, config.alpha if alpha is None else alpha, vol, basis,
        epsilon0=config.epsilon0)
    z0 = basis.coefficients(problem.initial_curve, n)
    if np.any(np.abs(z0) > 0.5 * config.half_width):
        raise ConfigurationError(
            f"initial coordinates {z0.round(4)} must lie within half of the "
            f"domain half-width {config.half_width}")
    grid = config.pde_grid(n_dims=n, n_state=n_state, n_time=n_time)
    obstacle = pde.make_obstacle(problem, coeffs, grid, config.k if k is None else k)
    surface = pde.psor_solve(pde.build_operator(coeffs, grid), obstacle, grid,
                             omega=config.omega, tol=config.sor_tol,
                             max_iterations=config.max_iterations)
    price = surface.price(problem.valuation_time, z0)
    return surface, coeffs, basis, problem, price


def cmd_price(config: RunConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    surface, coeffs, basis, problem, price_pde = solve_chain(config)
    rule = pde.exercise_rule(surface, config.tol_gap_factor * config.strike)

    vol = config.vol_model()
    res = lsmc.lsmc_price(problem, vol, config.lsmc_config())
    euro, euro_se = lsmc.european_price(problem, vol, config.lsmc_config())
    diag = lsmc.martingale_diagnostic(
        surface, rule, problem, vol,
        config.lsmc_config(n_paths=config.diagnostic_paths), basis)

    report = {
        "price_pde": price_pde,
        "price_lsmc_out": res.price,
        "stderr": res.stderr,
        "price_lsmc_in": res.price_in_sample,
        "stderr_in": res.stderr_in_sample,
        "price_european": euro,
        "european_stderr": euro_se,
        "martingale_max_dev": diag["max_deviation"],
        "martingale_max_dev_stderr_units": diag["max_deviation_stderr_units"],
        "sup_second_moment": diag["sup_second_moment"],
        "exercise_at_start": res.exercise_at_start,
        "all_out_of_money": res.all_out_of_money,
        "psor_iterations": surface.psor_iterations,
        "max_complementarity": surface.max_complementarity,
        "config_hash": config.config_hash(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    pde.export_surface_csv(surface, out / "surface.csv")
    surface_summary = {
        "price_at_start": price_pde,
        "boundary_trace": [None if not np.isfinite(b) else float(b)
                           for b in (surface.boundary if surface.boundary is not None
                                     else [np.nan] * len(surface.times))],
        "times": [float(t) for t in surface.times],
        "max_complementarity": surface.max_complementarity,
        "max_residual_violation": surface.max_residual_violation,
        "psor_iterations": surface.psor_iterations,
    }
    (out / "surface.json").write_text(json.dumps(surface_summary, sort_keys=True) + "\n")
    with open(out / "boundary.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "exercise_boundary"])
        bnd = surface.boundary if surface.boundary is not None else [np.nan] * len(surface.times)
        for t, b in zip(surface.times, bnd):
            wr.writerow([f"{t:.10g}", f"{b:.10g}"])
    if config.dump_paths:
        ens = lsmc._ensemble(problem, vol, config.lsmc_config(n_paths=min(config.n_paths, 10_000)),
                             config.seed)
        ens.dump_csv_gz(out / "paths.csv.gz")
    print(f"price_pde={price_pde:.6f} price_lsmc={res.price:.6f} "
          f"stderr={res.stderr:.2e} report={out / 'report.json'}")
    return EXIT_OK


def cmd_converge(config: RunConfig, axis: str) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    slack = 1e-12

    if axis == "k":
        prices = {kk: solve_chain(config, k=kk)[4] for kk in K_SCHEDULE}
        ref = prices[K_SCHEDULE[-1]]
        gaps = [abs(prices[kk] - ref) for kk in K_SCHEDULE[:-1]]
        fitted_c = max(kk * g for kk, g in zip(K_SCHEDULE[:-1], gaps))
        for kk, g in zip(K_SCHEDULE[:-1], gaps):
            rows.append((kk, prices[kk], g))
        rows.append((K_SCHEDULE[-1], ref, 0.0))
        ok = all(gaps[i] >= gaps[i + 1] - slack for i in range(len(gaps) - 1))
        ok = ok and all(g <= fitted_c / kk + slack for kk, g in zip(K_SCHEDULE[:-1], gaps))
        detail = f"gaps to k={K_SCHEDULE[-1]}: {gaps}, fitted c={fitted_c:.4g}"
    elif axis == "alpha":
        # rank >= 2: on the constant mode alone the projected regularized
        # transport vanishes for every alpha and the study would be vacuous
        n = max(config.n, 2)
        ns = min(config.n_state, 81) if n > 1 else config.n_state
        nt = min(config.n_time, 100) if n > 1 else config.n_time
        prices = {a: solve_chain(config, alpha=a, n=n, n_state=ns, n_time=nt)[4]
                  for a in ALPHA_SCHEDULE}
        vals = [prices[a] for a in ALPHA_SCHEDULE]
        changes = [abs(vals[i + 1] - vals[i]) for i in range(len(vals) - 1)]
        for a, p in prices.items():
            rows.append((a, p, max(changes)))
        ok = all(changes[i + 1] <= changes[i] + slack for i in range(len(changes) - 1))
        detail = f"alpha changes at n={n}: {changes}"
    elif axis == "n":
        # a per-axis lattice that is affordable in two dimensions; both legs
        # use the same resolution so the n-comparison is like for like
        ns = min(config.n_state, 81)
        nt = min(config.n_time, 100)
        prices = {nn: solve_chain(config, n=nn, n_state=ns, n_time=nt)[4]
                  for nn in N_SCHEDULE}
        vals = [prices[nn] for nn in N_SCHEDULE]
        change = abs(vals[1] - vals[0])
        for nn, p in prices.items():
            rows.append((nn, p, change))
        ok = np.isfinite(change)
        detail = f"|P(n=2) - P(n=1)| = {change:.4g}"
    elif axis == "grid":
        base_state, base_time = config.n_state, config.n_time
        levels = [(max(5, (base_state - 1) // 4 + 1), max(1, base_time // 4)),
                  (max(5, (base_state - 1) // 2 + 1), max(1, base_time // 2)),
                  (base_state, base_time)]
        ps = [solve_chain(config, n_state=ns, n_time=nt)[4] for ns, nt in levels]
        d1, d2 = ps[0] - ps[1], ps[1] - ps[2]
        ratio = d1 / d2 if d2 != 0.0 else np.inf
        for (ns, nt), p in zip(levels, ps):
            rows.append((ns, p, abs(d1)))
        ok = 2.5 <= ratio <= 5.5
        detail = f"Richardson ratio {ratio:.3f} from prices {ps}"
    else:
        raise UsageError(f"unknown convergence axis {axis!r}")

    path = out / f"converge_{axis}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["axis_value", "price", "max_change"])
        for r in rows:
            wr.writerow([f"{r[0]}", f"{r[1]:.12g}", f"{r[2]:.12g}"])
    print(f"axis={axis} {detail} -> {path}")
    if not ok:
        raise TrendError(f"{axis}-axis trend violated: {detail}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# property suites
# ---------------------------------------------------------------------------

def _suite_payoff(config: RunConfig):
    space = config.space()
    basis = curves.build_basis(space)
    rng = np.random.default_rng(config.seed)
    vol = config.vol_model()
    cbound = curves.sup_bound_constant(space)
    T = config.maturity
    checks = []
    coeffs = curves.sample_gaussian_coeffs(500, basis.size, space, rng)
    levels = rng.uniform(-0.05, 0.15, size=500)
    worst_pay = 0.0
    worst_lip = 0.0
    worst_moll = {10: 0.0, 100: 0.0}
    kern = {kk: smoothing.smoothed_kernel(kk) for kk in (10, 100)}
    for i in range(500):
        h = basis.synthesize(coeffs[i]) + curves.flat_curve(levels[i], space)
        g = basis.synthesize(coeffs[(i + 1) % 500]) + curves.flat_curve(levels[(i + 1) % 500], space)
        t = float(rng.uniform(0.0, T))
        sh = dynamics.PathState(t=t, curve=h)
        sg = dynamics.PathState(t=t, curve=g)
        ph = dynamics.payoff(sh, config.strike, T)
        pg = dynamics.payoff(sg, config.strike, T)
        worst_pay = max(worst_pay, ph - config.strike)
        denom = curves.norm_w(h - g)
        if denom > 1e-12:
            worst_lip = max(worst_lip, abs(ph - pg) - cbound * T * denom)
        for kk in (10, 100):
            gap = abs(kern[kk].payoff(sh, config.strike, T) - ph)
            worst_moll[kk] = max(worst_moll[kk], gap - 1.0 / kk)
    checks.append(("payoff_bounded_by_strike", worst_pay <= 1e-12,
                   f"max payoff - K = {worst_pay:.3e}"))
    checks.append(("payoff_space_lipschitz", worst_lip <= 1e-6,
                   f"max excess over C*T*norm = {worst_lip:.3e}"))
    for kk in (10, 100):
        checks.append((f"mollified_gap_k{kk}", worst_moll[kk] <= 0.0,
                       f"max |smoothed-raw| - 1/k = {worst_moll[kk]:.3e}"))
    return checks


def _suite_gaussian(config: RunConfig):
    space = config.space()
    basis = curves.build_basis(space)
    rng = np.random.default_rng(config.seed)
    n = basis.size
    lam = np.asarray(space.q_eigenvalues[:n])
    draws = curves.sample_gaussian_coeffs(100_000, n, space, rng)
    gram = basis.matrix @ basis.functionals.T  # numeric Gram, ~identity
    coords = draws @ gram.T
    var = coords.var(axis=0, ddof=1)
    rel = np.max(np.abs(var - lam) / lam)
    norms2 = np.einsum("ij,jk,ik->i", draws, gram, draws)
    mean_norm2 = float(np.mean(norms2))
    target = float(np.sum(lam))
    rel_norm = abs(mean_norm2 - target) / target
    sup_c = curves.sup_bound_constant(space)
    sample_vals = draws[:1000] @ basis.matrix[:n]
    sup_ratio = np.max(np.abs(sample_vals).max(axis=1)
                       / np.maximum(curves.norm_w_rows(sample_vals, space), 1e-300))
    return [
        ("coordinate_variances_match", rel <= 0.05,
         f"max relative variance error {rel:.4f}"),
        ("norm_second_moment_matches", rel_norm <= 0.05,
         f"E||h||^2 = {mean_norm2:.5f} vs {target:.5f}"),
        ("sup_injection_on_samples", sup_ratio <= sup_c + 1e-6,
         f"max sup/norm ratio {sup_ratio:.5f} vs C = {sup_c:.5f}"),
    ]


def _suite_martingale(config: RunConfig):
    surface, coeffs, basis, problem, _ = solve_chain(config)
    rule = pde.exercise_rule(surface, config.tol_gap_factor * config.strike)
    vol = config.vol_model()
    diag = lsmc.martingale_diagnostic(
        surface, rule, problem, vol,
        config.lsmc_config(n_paths=config.diagnostic_paths), basis)
    checks = [("stopped_value_identity", diag["max_deviation_stderr_units"] <= 3.0,
               f"max deviation {diag['max_deviation']:.3e} "
               f"({diag['max_deviation_stderr_units']:.2f} se)")]
    sups = []
    for s in range(3):
        mc_cfg = config.lsmc_config(n_paths=4000, seed=config.seed + 17 * (s + 1))
        ens = lsmc._ensemble(problem, vol, mc_cfg, mc_cfg.seed)
        sup = np.exp(np.max(-(ens.log_discount.astype(float)
                              - ens.log_discount[:, :1].astype(float)), axis=1))
        sups.append(lsmc.mc_mean_stderr(sup, config.antithetic))
    spread = max(m for m, _ in sups) - min(m for m, _ in sups)
    joint = 3.0 * max(se for _, se in sups) * np.sqrt(2.0)
    checks.append(("discount_sup_stable_across_seeds", spread <= joint,
                   f"spread {spread:.3e} vs 3*joint se {joint:.3e}"))
    return checks


def _suite_regularity(config: RunConfig):
    surface, coeffs, basis, problem, _ = solve_chain(config)
    space = config.space()
    rng = np.random.default_rng(config.seed + 5)
    n = surface.n_dims
    beta = 1.0
    ratios_space, ratios_time = [], []
    for _ in range(200):
        lvl = rng.uniform(0.02, 0.12, size=2)
        pert = curves.sample_gaussian_coeffs(2, basis.size, space, rng) * 0.2
        h = curves.flat_curve(lvl[0], space) + basis.synthesize(pert[0])
        g = curves.flat_curve(lvl[1], space) + basis.synthesize(pert[1])
        t = float(rng.uniform(problem.valuation_time, problem.maturity))
        t2 = float(rng.uniform(problem.valuation_time, problem.maturity))
        try:
            vh = pde.value_at(surface, t, h, basis)
            vg = pde.value_at(surface, t, g, basis)
            vh2 = pde.value_at(surface, t2, h, basis)
        except HjmPutError:
            continue
        nh, ng = curves.norm_w(h), curves.norm_w(g)
        dn = curves.norm_w(h - g)
        if dn > 1e-9:
            ratios_space.append(abs(vh - vg) / ((np.exp(beta * nh / 2)
                                                 + np.exp(beta * ng / 2)) * dn))
        if abs(t2 - t) > 1e-6:
            ratios_time.append(abs(vh2 - vh) / ((1 + nh) * np.exp(beta * nh / 2)
                                                * abs(t2 - t)))
    fit_l = max(ratios_space)
    fit_lp = max(ratios_time)
    return [
        ("value_space_lipschitz_form", np.isfinite(fit_l) and fit_l < 10.0,
         f"fitted L = {fit_l:.4f} (beta = {beta})"),
        ("value_time_lipschitz_form", np.isfinite(fit_lp) and fit_lp < 10.0,
         f"fitted L' = {fit_lp:.4f} (beta = {beta})"),
    ]


SUITES = {
    "payoff": _suite_payoff,
    "gaussian": _suite_gaussian,
    "martingale": _suite_martingale,
    "regularity": _suite_regularity,
}


def cmd_proptest(config: RunConfig, suite: str) -> int:
    if not suite:
        raise UsageError("empty property-suite name")
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checks = SUITES[suite](config)

    root = ET.Element("testsuite", name=f"proptest-{suite}",
                      tests=str(len(checks)),
                      failures=str(sum(1 for _, ok, _ in checks if not ok)))
    lines = []
    failed = []
    for name, ok, detail in checks:
        case = ET.SubElement(root, "testcase", name=name)
        status = "PASS" if ok else "FAIL"
        lines.append(f"{status} {name}: {detail}")
        if not ok:
            ET.SubElement(case, "failure", message=detail)
            failed.append((name, detail))
    ET.ElementTree(root).write(out / f"proptest_{suite}.xml",
                               encoding="unicode", xml_declaration=True)
    summary = "\n".join(lines) + "\n"
    (out / f"proptest_{suite}.txt").write_text(summary)
    print(summary, end="")
    if failed:
        raise PropertyError("; ".join(f"{n} ({d})" for n, d in failed))
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = config.space()
    problem = config.problem(space)
    vol = config.vol_model()
    n_paths = config.n_paths
    if config.dump_paths:
        n_paths = min(n_paths, 10_000)  # keep the CSV dump tractable
    ens = lsmc._ensemble(problem, vol, config.lsmc_config(n_paths=n_paths),
                         config.seed)
    pay = np.maximum(config.strike - ens.bond.astype(float), 0.0)
    summary = {
        "n_paths": ens.n_paths,
        "n_steps": len(ens.times) - 1,
        "mean_terminal_discount": float(np.mean(np.exp(ens.log_discount[:, -1].astype(float)))),
        "max_payoff": float(pay.max()),
        "payoff_bound_ok": bool(pay.max() <= config.strike),
        "mean_sup_discount": float(np.mean(np.exp(
            np.max(-ens.log_discount.astype(float), axis=1)))),
        "config_hash": config.config_hash(),
    }
    (out / "simulate.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if config.dump_paths:
        ens.dump_csv_gz(out / "paths.csv.gz")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="hjmput",
                description="American puts on zero-coupon bonds under an "
                            "HJM forward-curve model")
    p.add_argument("--config", type=str, default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for path chunks (BLAS threads untouched)")
    p.add_argument("--dump-paths", action="store_true",
                   help="write the path ensemble as compressed CSV")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("price", help="PDE + LSMC pricing run with reports")
    c = sub.add_parser("converge", help="convergence study along one axis")
    c.add_argument("--axis", required=True, help="k | alpha | n | grid")
    t = sub.add_parser("proptest", help="run a named invariant suite")
    t.add_argument("--suite", required=True, help="payoff | regularity | martingale | gaussian")
    sub.add_parser("simulate", help="simulate the path ensemble and summarize")
    return p


def load_config(args) -> RunConfig:
    config = RunConfig.from_toml(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.threads is not None:
        config.threads = args.threads
    if args.dump_paths:
        config.dump_paths = True
    return config


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args)
        if args.command == "price":
            return cmd_price(config)
        if args.command == "converge":
            return cmd_converge(config, args.axis)
        if args.command == "proptest":
            return cmd_proptest(config, args.suite)
        if args.command == "simulate":
            return cmd_simulate(config)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, OSError) as exc:
        print(f"config/io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrendError as exc:
        print(f"convergence-trend failure: {exc}", file=sys.stderr)
        return EXIT_TREND
    except PropertyError as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except HjmPutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
