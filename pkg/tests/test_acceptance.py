"""Full-scale acceptance checks, one PASS/FAIL line per criterion.

Run alone with ``pytest -m acceptance -s``. Each test prints its verdict line
even when output capture is on.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from feedback_urn import cli
from feedback_urn.config import load_config
from feedback_urn.deployment import run_scenario
from feedback_urn.harness import default_target
from feedback_urn.limits import DeterministicMatrix2, MixedParams, PointMass, kappa_form, mixed_limit, renlund_limit
from feedback_urn.pointproc import EmConfig, SeppModel, fit_em_result, log_likelihood, simulate_sepp
from feedback_urn.urn import NO_DECAY, Bernoulli, ReplacementRule, UrnState, simulate_many

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

ROOT = Path(__file__).resolve().parents[1]
FULL = ROOT / "configs" / "full"
WORKERS = os.cpu_count() or 1


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, t0):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s) {detail}")
        assert ok, detail

    return emit


def test_1_beta_limit(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    final = simulate_many(UrnState([3.0, 5.0]), ReplacementRule.standard_polya(), NO_DECAY, 10_000, 2000, rng)
    frac = final[:, 0] / final.sum(axis=1)
    p = stats.kstest(frac, stats.beta(3, 5).cdf).pvalue
    verdict(1, p > 0.01, f"KS p-value {p:.4f} vs Beta(3,5), alpha 0.01", t0)


def test_2_runaway(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    rule = ReplacementRule.diagonal([Bernoulli(0.11), Bernoulli(0.10)])
    final = simulate_many(UrnState([1.0, 1.0]), rule, NO_DECAY, 100_000, 200, rng)
    frac = final[:, 0] / final.sum(axis=1)
    share = float((frac > 0.95).mean())
    verdict(2, share >= 0.90, f"{share:.1%} of runs above 0.95 (need >= 90%), median {np.median(frac):.3f}", t0)


def _random_point_mass_matrices(rng, n):
    out = []
    while len(out) < n:
        a, b, c, d = rng.uniform(0.1, 1.0, 4)
        m = DeterministicMatrix2(a, b, c, d)
        res = renlund_limit(m)
        if isinstance(res, PointMass) and not res.flagged:
            out.append((m, res.x_star))
    return out


def test_3_closed_form_vs_monte_carlo(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for m, x_star in _random_point_mass_matrices(rng, 50):
        rule = ReplacementRule.from_means([[m.a, m.b], [m.c, m.d]])
        final = simulate_many(UrnState([1.0, 1.0]), rule, NO_DECAY, 100_000, 200, rng)
        med = float(np.median(final[:, 0] / final.sum(axis=1)))
        worst = max(worst, abs(med - x_star))
    verdict(3, worst <= 0.02, f"largest |median - limit| over 50 matrices = {worst:.4f} (tol 0.02)", t0)


def test_4_closed_forms_agree(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst, n = 0.0, 0
    while n < 10_000:
        w_d = rng.uniform(0.01, 0.99)
        d_a, d_b, r_a, r_b = rng.uniform(0.0, 5.0, 4)
        p = MixedParams(w_d, 1 - w_d, d_a, d_b, r_a, r_b)
        if p.delta_d <= 0 or p.R <= 0:
            continue
        worst = max(worst, abs(kappa_form(p.lambda_star, p.kappa) - mixed_limit(p)))
        n += 1
    edge = max(abs(mixed_limit(MixedParams(0.5, 0.5, lam, 1 - lam, lam, 1 - lam)) - lam) for lam in (0.001, 0.999))
    ok = worst < 1e-9 and edge < 0.005
    verdict(4, ok, f"max |kappa form - solver| = {worst:.2e}; boundary error {edge:.2e}", t0)


def _full_runs(path, keep):
    exp = load_config(path)
    out = {}
    for cfg in exp.scenarios:
        if keep(cfg.name):
            log = run_scenario(cfg, workers=WORKERS)
            out[cfg.name] = (cfg, log.terminal())
    return out


def test_5_full_urn_scenarios(verdict):
    t0 = time.perf_counter()
    runs = _full_runs(FULL / "urn.toml", lambda n: "top2-random" not in n)
    assert len(runs) == 8
    checks = []
    for name, (cfg, term) in runs.items():
        med = float(np.median(term))
        lam = cfg.true_fraction
        if cfg.corrected:
            ok = abs(med - lam) <= 0.02
            checks.append((f"(c) {name}", ok, f"{med:.4f} vs {lam:.4f}"))
        elif cfg.incident_mode.mixed:
            target, _ = default_target(cfg)
            ok = abs(med - target) <= 0.02 and abs(med - lam) > 0.02
            checks.append((f"(b) {name}", ok, f"{med:.4f} vs limit {target:.4f}, lambda* {lam:.4f}"))
        else:
            checks.append((f"(a) {name}", med > 0.95, f"{med:.4f} > 0.95"))
    bad = [c for c in checks if not c[1]]
    detail = "; ".join(f"{'ok' if ok else 'MISS'} {label}: {txt}" for label, ok, txt in sorted(checks))
    verdict(5, not bad, detail, t0)


def test_6_sepp_loop(verdict):
    t0 = time.perf_counter()
    runs = _full_runs(FULL / "sepp.toml", lambda n: "-discovered-" in n)
    assert len(runs) == 4
    checks = []
    for pair in ("top1-top2", "top1-random"):
        cfg_u, term_u = runs[f"sepp-{pair}-discovered-uncorrected"]
        cfg_c, term_c = runs[f"sepp-{pair}-discovered-corrected"]
        lam = cfg_c.true_fraction
        q_u, q_c = np.percentile(term_u, [25, 75]), np.percentile(term_c, [25, 75])
        iqr_u, iqr_c = q_u[1] - q_u[0], q_c[1] - q_c[0]
        med_u, med_c = float(np.median(term_u)), float(np.median(term_c))
        ok_a = iqr_u >= 3 * iqr_c and abs(med_u - lam) > 0.03
        ok_b = abs(med_c - lam) <= 0.03
        checks.append((f"(a) {pair}", ok_a, f"IQR {iqr_u:.4f} vs 3x{iqr_c:.4f}, median {med_u:.4f} vs {lam:.4f}"))
        checks.append((f"(b) {pair}", ok_b, f"median {med_c:.4f} vs {lam:.4f} +- 0.03"))
    bad = [c for c in checks if not c[1]]
    detail = "; ".join(f"{'ok' if ok else 'MISS'} {label}: {txt}" for label, ok, txt in checks)
    verdict(6, not bad, detail, t0)


def test_7_em_self_consistency(verdict):
    t0 = time.perf_counter()
    truth = SeppModel((0.8,), 0.4, 0.3)
    fits, monotone = [], True
    for seed in range(20):
        rng = np.random.default_rng(7000 + seed)
        events = simulate_sepp(truth, 2000, rng)
        res = fit_em_result(events, (0.0, 2000.0), EmConfig(max_iters=1000, rel_tolerance=1e-8))
        monotone &= bool(np.all(np.diff(res.loglik) >= -1e-8))
        monotone &= abs(log_likelihood(res.model, events, (0.0, 2000.0)) - res.loglik[-1]) < 1e-6 * abs(res.loglik[-1])
        fits.append(res.model)
    est = {
        "mu": np.median([f.mu[0] for f in fits]),
        "theta": np.median([f.theta for f in fits]),
        "omega": np.median([f.omega for f in fits]),
    }
    want = {"mu": 0.8, "theta": 0.4, "omega": 0.3}
    rel = {k: abs(est[k] - want[k]) / want[k] for k in want}
    ok = monotone and max(rel.values()) < 0.15
    detail = ", ".join(f"{k} {est[k]:.3f} ({rel[k]:.1%})" for k in want) + f"; monotone={monotone}"
    verdict(7, ok, detail, t0)


def test_8_determinism_across_threads(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    same = []
    for cfg_path, scen in ((FULL / "urn.toml", "urn-top1-random-mixed-corrected"),
                           (FULL / "sepp.toml", "sepp-top1-top2-discovered-corrected")):
        dirs = []
        for threads in (1, 4):
            out = tmp_path / f"{scen}-{threads}"
            code = cli.main([
                "run", str(cfg_path), "--scenario", scen, "--reps-override", "120",
                "--threads", str(threads), "--out", str(out), "--no-plot",
            ])
            assert code == 0
            dirs.append(out)
        same.append((dirs[0] / f"{scen}.csv").read_bytes() == (dirs[1] / f"{scen}.csv").read_bytes())
    capsys.readouterr()
    verdict(8, all(same), "CSV bytes at --threads 1 and 4 identical for urn and sepp scenarios", t0)
