"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
collected in the "acceptance criteria" section of the terminal summary.
"""

import time

import numpy as np

from steinbound import covariance, harness
from steinbound.bounds import (
    estimate_all, estimate_bn_terms, estimate_gamma12, estimate_gamma34, estimate_sigma_term,
    law_moments, linear_gamma_bounds,
)
from steinbound.boolean import exact_covariance_1d, sample_scene
from steinbound.discs import union_measures
from steinbound.enumeration import (
    exact_bn_terms, exact_expected_t, exact_gamma_totals, exact_sigma_term_squared,
    lemma_covariance_decomposition,
)
from steinbound.functionals import linear_statistic, max_functional, table_functional
from steinbound.knn import (
    alpha_cones, degree_sum_features, delta_statistic, noninteraction_check,
)
from steinbound.laws import FiniteLaw, NormalLaw, UniformBoxLaw, bernoulli, uniform_atoms
from steinbound.resample import SampleBatch, t_matrix, tilde_delta_i_delta_j

from oracles import exposed_half_perimeter, grid_area, random_instance

# E|X - X'|^3 for independent standard normals is 2^{3/2} * 2 sqrt(2/pi)
GAUSS_CUBE = 2 ** 1.5 * 2 * np.sqrt(2 / np.pi)


def write_config(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return harness.load_config(str(p))


def metric(rows, name):
    return {r["n"]: r["value"] for r in rows if r["metric"] == name}


class TestAcceptance:
    def test_criterion_01_covariance_decomposition(self, verdict):
        t0 = time.perf_counter()
        worst = 0.0
        for seed in range(100):
            law, n, g, h = random_instance(seed)
            lhs, rhs = lemma_covariance_decomposition(g, h, law, n)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        elapsed = time.perf_counter() - t0
        verdict(1, worst <= 1e-12 and elapsed < 10,
                f"max |Cov - decomposition| = {worst:.2e} (tol 1e-12), {elapsed:.2f} s (< 10 s)")

    def test_criterion_02_expected_t(self, verdict):
        worst = 0.0
        for seed in range(100):
            law, n, f, _ = random_instance(seed)
            et, cov = exact_expected_t(f, law, n)
            worst = max(worst, float(np.max(np.abs(et - cov))))
        verdict(2, worst <= 1e-12, f"max |E T - Cov W| = {worst:.2e} (tol 1e-12)")

    def test_criterion_03_linear_structure(self, verdict):
        rng = np.random.default_rng(3)
        problems = []
        # dyadic inputs keep every sum exact, so zero means bitwise zero
        n = 4
        f_exact = linear_statistic(n, zero_tol=0.0)
        for _ in range(200):
            batch = SampleBatch.draw(bernoulli(0.5), n, rng)
            for i in range(n):
                for j in range(n):
                    if i != j and np.any(tilde_delta_i_delta_j(f_exact, batch, i, j) != 0.0):
                        problems.append(f"second-order difference ({i},{j}) nonzero")
        bn_exact = exact_bn_terms(linear_statistic(3, zero_tol=0.0),
                                  uniform_atoms(-1.0, 0.5, 2.0), 3)
        bn_mc = estimate_bn_terms(f_exact, bernoulli(0.5), n, 20_000, rng)
        for name, v in (("exact B_n", bn_exact.bn), ("exact B_n'", bn_exact.bn_prime),
                        ("mc B_n", bn_mc.bn.value), ("mc B_n'", bn_mc.bn_prime.value)):
            if v != 0.0:
                problems.append(f"{name} = {v}")
        n = 100
        g1 = estimate_gamma12(linear_statistic(n), NormalLaw(), n, 1_000_000, rng).gamma1.value
        closed = GAUSS_CUBE / np.sqrt(n)
        rel = abs(g1 / closed - 1)
        if rel > 0.02:
            problems.append(f"gamma1 off by {rel:.3%}")
        checked = 0
        for law in (NormalLaw(), FiniteLaw(np.array([-0.5, 0.5]))):
            for n in (4, 16, 64):
                sigma = float(law.covariance()[0, 0])
                est = estimate_all(linear_statistic(n), law, n, sigma, 50_000, 5_000, 4, rng)
                caps = linear_gamma_bounds(law_moments(law), n)
                for key in ("gamma1", "gamma2", "gamma3", "gamma4", "sigma_term"):
                    checked += 1
                    if getattr(est, key) > caps[key]:
                        problems.append(f"{key} > closed-form bound at n={n}")
        verdict(3, not problems,
                f"second-order and B_n zeros exact; gamma1(n=100) = {g1:.5f} vs {closed:.5f} "
                f"({rel:.2%}, tol 2%); {checked} ingredient inequalities checked"
                + (f"; problems: {problems[:3]}" if problems else ""))

    def test_criterion_04_rate(self, tmp_path, verdict):
        cfg = write_config(tmp_path, "rate.toml", """
[experiment]
kind = "rate-study"
seed = 2024
[model]
d = 2
law = "cube-vertex"
n_grid = [16, 32, 64, 128, 256, 512, 1024]
[estimator]
samples = 1000000
block = 100000
directions = 64
thresholds = 0
""")
        t0 = time.perf_counter()
        res = harness.run(cfg, str(tmp_path / "out"), workers=2)
        elapsed = time.perf_counter() - t0
        slope = metric(res.rows, "slope-proxy-halfspace")[None]
        proxy = metric(res.rows, "proxy-halfspace")
        bound = metric(res.rows, "bound-linear-convex")
        valid = all(bound[n] >= proxy[n] for n in proxy)
        ok = -0.65 <= slope <= -0.35 and valid and elapsed < 600
        verdict(4, ok, f"half-space proxy slope {slope:.3f} in [-0.65, -0.35]; bound >= proxy "
                       f"at every n: {valid}; {elapsed:.1f} s (< 600 s)")

    def test_criterion_05_disc_geometry(self, verdict):
        rng = np.random.default_rng(5)
        worst2 = worst1 = 0.0
        for s in range(100):
            m = int(rng.integers(3, 11))
            R = float(rng.uniform(0.3, 1.0))
            c = sample_scene(2, m, R, seed=s).germs
            um = union_measures(c, R, seed=s)
            _, area = grid_area(np.asarray(c), R, 0.002)
            worst2 = max(worst2, abs(um.v2 / area - 1))
            worst1 = max(worst1, abs(um.v1 / exposed_half_perimeter(np.asarray(c), R) - 1))
        resid = 0.0
        for s in range(10_000):
            m = int(rng.integers(1, 11))
            R = float(rng.uniform(0.1, 1.5))
            um = union_measures(sample_scene(2, m, R, seed=10_000 + s).germs, R, seed=s)
            resid = max(resid, um.residual)
        verdict(5, worst2 <= 5e-3 and worst1 <= 1e-2 and resid < 1e-6,
                f"V2 rel err {worst2:.2e} (tol 5e-3), V1 rel err {worst1:.2e} (tol 1e-2) on 100 "
                f"scenes; max Gauss-Bonnet residual {resid:.1e} on 10^4 scenes (tol 1e-6)")

    def test_criterion_06_covariance_rate(self, tmp_path, verdict):
        cfg = write_config(tmp_path, "boolean.toml", """
[experiment]
kind = "boolean-model"
seed = 11
[model]
d = 1
R = 0.3
n_grid = [64, 128, 256, 512, 1024, 2048, 4096]
[estimator]
reps = 10000
""")
        res = harness.run(cfg, str(tmp_path / "out"), workers=2)
        gaps = metric(res.rows, "gap-sigma_n-vs-exact")
        ns = sorted(gaps)
        decreasing = all(gaps[b] < gaps[a] for a, b in zip(ns, ns[1:]))
        slope = metric(res.rows, "slope-gap-sigma_n")[None]
        eigs = {}
        for R in (0.2, 0.5, 1.0):
            s = covariance.sigma_series(1, R, 12, 1 << 14, np.random.default_rng(6), "qmc")
            eigs[R] = s.min_eigenvalue
        ok = decreasing and -1.4 <= slope <= -0.6 and min(eigs.values()) > 0
        verdict(6, ok, f"Monte Carlo gaps {[f'{gaps[n]:.1e}' for n in ns]} decreasing: "
                       f"{decreasing}; slope {slope:.3f} (target [-1.4, -0.6]); min eigenvalues "
                       + ", ".join(f"R={R}: {v:.3e}" for R, v in eigs.items()))

    def test_covariance_rate_exact_moments(self):
        # the same gap computed from the exact finite-n covariance, free of sampling noise
        lim = covariance.sigma_exact_1d(0.3)
        ns = [2 ** e for e in range(6, 13)]
        gaps = [covariance.covariance_gap_report(exact_covariance_1d(n, 0.3), lim).max_gap
                for n in ns]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        slope = covariance.gap_exponent(ns, gaps).slope
        assert -1.4 <= slope <= -0.6
        truncated = covariance.sigma_partial_exact_1d(0.3, 30)
        assert np.max(np.abs(truncated - lim)) < 1e-12

    def test_criterion_07_pp_identity(self, verdict):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(10):
            R = float(rng.uniform(0.05, 2.0))
            lo, hi = np.sort(rng.uniform(-3, 3, size=2))
            chk = covariance.pp_identity_check(1, R, [1.0, hi - lo], depth=40)
            worst = max(worst, chk.max_error)
        verdict(7, worst <= 1e-8, f"max series vs closed form error {worst:.2e} (tol 1e-8)")

    def test_criterion_08_knn(self, tmp_path, verdict):
        rng = np.random.default_rng(8)
        applicable = failures = 0
        for t in range(10_000):
            k = 1 + t % 3
            n = int(rng.integers(k + 3, 16))
            x = rng.uniform(0, np.sqrt(n), size=(n, 2))
            xp = rng.uniform(0, np.sqrt(n), size=(n, 2))
            i, j = (int(v) for v in rng.choice(n, 2, replace=False))
            app, holds = noninteraction_check(degree_sum_features(k), x, xp, i, j)
            applicable += app
            failures += app and not holds
        law = UniformBoxLaw(dim=2, volume=200.0)
        deltas = {}
        for k in (1, 2, 3):
            deltas[k] = max(delta_statistic(law.sample(rng, (204,)), k) for _ in range(10_000))
        caps = {k: alpha_cones(2) * (k + 1) * (k + 5) + 1 for k in deltas}
        cfg = write_config(tmp_path, "knn.toml", """
[experiment]
kind = "knn"
seed = 3
[model]
d = 2
k = 1
p = 12
n_grid = [64, 128, 256, 512, 1024, 2048]
[estimator]
reps = 300
pilot = 300
""")
        res = harness.run(cfg, str(tmp_path / "out"), workers=2)
        slope = metric(res.rows, "slope-bound-knn-smooth")[None]
        target = -(12 - 8) / 24
        ok = (failures == 0 and applicable > 0 and all(deltas[k] <= caps[k] for k in deltas)
              and abs(slope - target) <= 0.15)
        verdict(8, ok, f"noninteraction {applicable} applicable of 10^4, {failures} failures; "
                       f"max delta {deltas} vs caps {caps}; report slope {slope:.3f} "
                       f"(target {target:.3f} +- 0.15)")

    def test_criterion_09_unbiasedness(self, verdict):
        rng = np.random.default_rng(9)
        reps = 100_000
        skewed = FiniteLaw(np.array([-1.0, 0.5, 2.0]), np.array([0.2, 0.5, 0.3]))
        table = np.random.default_rng(90).normal(size=(3, 3, 2))
        battery = [
            ("max/uniform/n=3", max_functional(), uniform_atoms(0.0, 1.0, 3.0), 3, 0.5),
            ("max/skewed/n=3", max_functional(), skewed, 3, 0.3),
            ("table2d/skewed/n=2", table_functional(skewed.values, table, 2), skewed, 2,
             np.array([[0.8, 0.1], [0.1, 0.6]])),
        ]
        zs = {}

        def z(name, est, exact, se):
            est, exact, se = (np.atleast_1d(np.asarray(v, float)) for v in (est, exact, se))
            for e, x, s in zip(est.ravel(), exact.ravel(), se.ravel()):
                zs.setdefault(name, []).append(
                    0.0 if s == 0 and e == x else abs(e - x) / s if s > 0 else np.inf)

        for label, f, law, n, sigma in battery:
            ex = exact_gamma_totals(f, law, n)
            g12 = estimate_gamma12(f, law, n, reps, rng)
            z(f"{label} gamma1", g12.gamma1.value, ex.cube_sum, g12.gamma1.stderr)
            z(f"{label} gamma2^2", g12.fourth_sum.value, ex.fourth_sum, g12.fourth_sum.stderr)
            g34 = estimate_gamma34(f, law, n, reps, 4, rng)
            for p, total in ((1, ex.gamma3_cubed), (2, ex.gamma4_fourth)):
                z(f"{label} gamma{p + 2} groups", g34.groups[p], ex.q[p], g34.groups_se[p])
                z(f"{label} gamma{p + 2} total", g34.totals[p].value, total,
                  g34.totals[p].stderr)
            _, sq, _ = estimate_sigma_term(f, sigma, law, n, reps, 4, rng)
            z(f"{label} sigma_term^2", sq.value, exact_sigma_term_squared(f, law, n, sigma),
              sq.stderr)
            batch = SampleBatch.draw(law, n, rng)
            te = t_matrix(f, batch)
            tm = t_matrix(f, batch, "monte-carlo", rng, reps)
            z(f"{label} t_matrix", tm.t, te.t, tm.stderr)
            if f.symmetric and n >= 3:
                eb = exact_bn_terms(f, law, n)
                mb = estimate_bn_terms(f, law, n, reps, rng)
                z(f"{label} B_n", mb.bn.value, eb.bn, mb.bn.stderr)
                z(f"{label} B_n'", mb.bn_prime.value, eb.bn_prime, mb.bn_prime.stderr)
                z(f"{label} E|D1 f|^4", mb.delta_fourth.value, eb.delta_fourth,
                  mb.delta_fourth.stderr)
        worst_name = max(zs, key=lambda k: max(zs[k]))
        worst = max(zs[worst_name])
        count = sum(len(v) for v in zs.values())
        verdict(9, worst <= 4.0, f"{count} estimator/oracle comparisons at 10^5 replicates; "
                                 f"largest |z| = {worst:.2f} ({worst_name}), tol 4")

    def test_criterion_10_determinism(self, tmp_path, verdict):
        blobs = {"selftest": set(), "rate-study": set()}
        cfg = write_config(tmp_path, "rate.toml", """
[experiment]
kind = "rate-study"
seed = 10
[model]
d = 2
n_grid = [4, 8, 16, 32]
[estimator]
samples = 20000
block = 5000
directions = 16
""")
        for run_id, workers in enumerate((1, 2, 1, 2)):
            out = tmp_path / f"run{run_id}"
            _, path = harness.selftest(0, workers, str(out))
            blobs["selftest"].add(open(path, "rb").read())
            res = harness.run(cfg, str(out), workers)
            blobs["rate-study"].add(open(res.csv_path, "rb").read())
        verdict(10, all(len(v) == 1 for v in blobs.values()),
                "distinct CSV contents over 2 runs x workers {1, 2}: "
                + ", ".join(f"{k}: {len(v)}" for k, v in blobs.items()))

