"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line with its headline numbers.

All tolerances are pinned here; the configurations they run on are frozen
(seeds included) so reruns are bit-reproducible.
"""

import json
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from hjmput.cli import RunConfig, cmd_converge, cmd_price, solve_chain
from hjmput.curves import (
    SpaceConfig,
    build_basis,
    flat_curve,
    norm_w,
    norm_w_rows,
    sample_gaussian_coeffs,
    sup_bound_constant,
)
from hjmput.dynamics import PathState, payoff
from hjmput.lsmc import lsmc_price, martingale_diagnostic
from hjmput.pde import exercise_rule, value_at
from hjmput.smoothing import smoothed_kernel

DEFAULT = RunConfig()                       # ITM pricing default
STUDY = RunConfig(curve_level=0.02, sigma0=0.10, epsilon0=0.05, k=16,
                  half_width=1.0, n_paths=20_000)

# criterion 7: fitted once on the frozen probe set below, then frozen
REG_BETA = 1.0
REG_L_SPACE = 0.32
REG_L_TIME = 0.25


@contextmanager
def criterion(num, label):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"[criterion {num}] {label}: FAIL ({time.time() - start:.1f}s)")
        raise
    print(f"[criterion {num}] {label}: PASS ({time.time() - start:.1f}s)")


def test_criterion_1_deterministic_benchmark():
    with criterion(1, "analytic deterministic benchmark"):
        start = time.time()
        cfg = replace(DEFAULT, strike=0.90, curve_level=0.20, sigma0=0.0,
                      n_paths=2000)
        target = 0.9 - np.exp(-0.2)
        _, _, _, problem, price_pde = solve_chain(cfg)
        res = lsmc_price(problem, cfg.vol_model(), cfg.lsmc_config())
        assert abs(price_pde - target) <= 1e-3
        assert abs(res.price - target) <= 1e-3

        cfg2 = replace(cfg, curve_level=-0.05)
        _, _, _, problem2, price_pde2 = solve_chain(cfg2)
        res2 = lsmc_price(problem2, cfg2.vol_model(), cfg2.lsmc_config())
        assert abs(price_pde2) <= 1e-4
        assert abs(res2.price) <= 1e-4
        assert time.time() - start < 30.0


def test_criterion_2_mollification_bound():
    with criterion(2, "uniform smoothing gap <= 1/k (exact)"):
        start = time.time()
        space = SpaceConfig()
        basis = build_basis(space)
        rng = np.random.default_rng(20_240)
        n_samples, maturity, strike = 10_000, 1.0, 0.9
        coeffs = sample_gaussian_coeffs(n_samples, basis.size, space, rng)
        ts = rng.uniform(0.0, maturity, size=n_samples)
        vals = coeffs @ basis.matrix
        # vectorized K - bond arguments: integral of each curve to T - t
        cums = np.concatenate(
            [np.zeros((n_samples, 1)),
             np.cumsum(0.5 * (vals[:, 1:] + vals[:, :-1]) * space.dx, axis=1)],
            axis=1)
        upto = maturity - ts
        j = np.minimum((upto / space.dx).astype(int), space.n_x - 2)
        frac = upto / space.dx - j
        rows = np.arange(n_samples)
        partial = cums[rows, j] + (vals[rows, j] * (1 - 0.5 * frac)
                                   + vals[rows, j + 1] * 0.5 * frac) * (upto - j * space.dx)
        args = strike - np.exp(-partial)
        raw = np.maximum(args, 0.0)
        for k in (10, 100, 1000):
            gap = np.abs(smoothed_kernel(k).g(args) - raw)
            assert float(gap.max()) <= 1.0 / k  # exact inequality, no slack
        assert time.time() - start < 10.0


def test_criterion_3_injection_and_payoff_lipschitz():
    with criterion(3, "sup-norm injection and payoff Lipschitz bound"):
        start = time.time()
        space = SpaceConfig()
        basis = build_basis(space)
        c_inj = sup_bound_constant(space)
        assert c_inj == pytest.approx(np.sqrt(4.0 / 3.0), rel=1e-12)
        rng = np.random.default_rng(20_241)
        coeffs = sample_gaussian_coeffs(2000, basis.size, space, rng)
        vals = coeffs @ basis.matrix
        sups = np.max(np.abs(vals), axis=1)
        norms = norm_w_rows(vals, space)
        assert np.all(sups <= c_inj * norms + 1e-6)

        maturity, strike = 1.0, 0.9
        for i in range(1000):
            h = basis.synthesize(coeffs[2 * (i % 1000)])
            g = basis.synthesize(coeffs[2 * (i % 1000) + 1])
            t = float(rng.uniform(0.0, maturity))
            ph = payoff(PathState(t=t, curve=h), strike, maturity)
            pg = payoff(PathState(t=t, curve=g), strike, maturity)
            assert abs(ph - pg) <= c_inj * maturity * norm_w(h - g) + 1e-6
        assert time.time() - start < 10.0


def test_criterion_4_oracle_agreement():
    with criterion(4, "PDE vs LSMC on the 6-case matrix"):
        start = time.time()
        for strike in (0.88, 0.92):
            for level in (0.01, 0.05, 0.10):
                cfg = replace(DEFAULT, strike=strike, curve_level=level,
                              n_paths=100_000)
                _, _, _, problem, price_pde = solve_chain(cfg)
                res = lsmc_price(problem, cfg.vol_model(), cfg.lsmc_config())
                tol = max(2e-3, 3.0 * res.stderr)
                assert abs(price_pde - res.price) <= tol, (
                    strike, level, price_pde, res.price, res.stderr)
        assert time.time() - start < 300.0


def test_criterion_5_stopped_value_identity():
    with criterion(5, "martingale diagnostic at 5 checkpoints"):
        start = time.time()
        cfg = DEFAULT
        surface, _, basis, problem, _ = solve_chain(cfg)
        rule = exercise_rule(surface, cfg.tol_gap_factor * cfg.strike)
        rep = martingale_diagnostic(
            surface, rule, problem, cfg.vol_model(),
            cfg.lsmc_config(n_paths=100_000), basis, n_checkpoints=5)
        assert len(rep["checkpoints"]) == 5
        assert rep["max_deviation_stderr_units"] <= 3.0, rep
        assert time.time() - start < 120.0


def test_criterion_6_convergence_trends(tmp_path):
    with criterion(6, "k / alpha / n / grid convergence trends"):
        start = time.time()
        out = str(tmp_path)
        cfg = replace(STUDY, out_dir=out)
        # k-axis: shrinking gaps to k=256, dominated by fitted c/k (exit 3 inside
        # cmd_converge on violation)
        assert cmd_converge(cfg, "k") == 0
        rows = (tmp_path / "converge_k.csv").read_text().splitlines()[1:]
        gaps = [float(r.split(",")[2]) for r in rows[:-1]]
        assert all(a >= b for a, b in zip(gaps, gaps[1:]))
        # alpha-axis (cmd_converge raises the rank to 2 itself: at n=1 the
        # projected transport vanishes on the constant mode and prices would
        # be alpha-independent)
        assert cmd_converge(cfg, "alpha") == 0
        # n-axis
        assert cmd_converge(cfg, "n") == 0
        # grid self-convergence: Richardson ratio within [2.5, 5.5]
        assert cmd_converge(cfg, "grid") == 0
        assert time.time() - start < 600.0


def test_criterion_7_regularity_surrogates():
    with criterion(7, "frozen value-regularity constants"):
        start = time.time()
        cfg = DEFAULT
        surface, _, basis, problem, _ = solve_chain(cfg)
        space = cfg.space()
        rng = np.random.default_rng(2024)   # frozen probe set
        worst_space, worst_time = 0.0, 0.0
        for _ in range(200):
            lvl = rng.uniform(0.02, 0.18, size=2)
            pert = sample_gaussian_coeffs(2, basis.size, space, rng) * 0.15
            h = flat_curve(lvl[0], space) + basis.synthesize(pert[0])
            g = flat_curve(lvl[1], space) + basis.synthesize(pert[1])
            t1 = float(rng.uniform(0.0, 1.0))
            t2 = float(rng.uniform(0.0, 1.0))
            vh = value_at(surface, t1, h, basis)
            vg = value_at(surface, t1, g, basis)
            vh2 = value_at(surface, t2, h, basis)
            nh, ng, dn = norm_w(h), norm_w(g), norm_w(h - g)
            if dn > 1e-9:
                envelope = (np.exp(REG_BETA * nh / 2) + np.exp(REG_BETA * ng / 2)) * dn
                worst_space = max(worst_space, abs(vh - vg) / envelope)
            if abs(t2 - t1) > 1e-6:
                envelope = (1 + nh) * np.exp(REG_BETA * nh / 2) * abs(t2 - t1)
                worst_time = max(worst_time, abs(vh2 - vh) / envelope)
        assert worst_space <= REG_L_SPACE, worst_space
        assert worst_time <= REG_L_TIME, worst_time
        assert time.time() - start < 120.0


def test_criterion_8_gaussian_measure():
    with criterion(8, "coordinate variances and norm second moment"):
        start = time.time()
        space = SpaceConfig()
        basis = build_basis(space)
        n = basis.size
        lam = np.asarray(space.q_eigenvalues[:n])
        rng = np.random.default_rng(20_248)
        draws = sample_gaussian_coeffs(100_000, n, space, rng)
        gram = basis.matrix @ basis.functionals.T
        coords = draws @ gram.T
        var = coords.var(axis=0, ddof=1)
        assert np.all(np.abs(var - lam) / lam <= 0.05)
        norms2 = np.einsum("ij,jk,ik->i", draws, gram, draws)
        target = float(lam.sum())
        assert abs(float(norms2.mean()) - target) / target <= 0.05
        assert time.time() - start < 10.0


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "byte-identical reports for identical seeds"):
        start = time.time()
        cfg = replace(DEFAULT, n_state=201, n_time=100, n_paths=4000,
                      diagnostic_paths=2000, out_dir=str(tmp_path / "a"))
        assert cmd_price(cfg) == 0
        cfg_b = replace(cfg, out_dir=str(tmp_path / "b"))
        assert cmd_price(cfg_b) == 0
        for name in ("report.json", "surface.csv", "boundary.csv"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["config_hash"] == json.loads(
            (tmp_path / "b" / "report.json").read_text())["config_hash"]
        assert time.time() - start < 60.0
