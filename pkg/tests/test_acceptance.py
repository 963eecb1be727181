"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict; conftest prints them together at the
end of the session. Run only these with ``pytest -m acceptance``.
"""

import time
from itertools import combinations

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import minimize
from scipy.special import gammaln

from partialmix import aecm
from partialmix.aecm import CellCounter, FitConfig, FitError, Responsibilities, fit, trace_states
from partialmix.data import Dataset, load_csv
from partialmix.evaluation import adjusted_rand_index
from partialmix.selection import select_k
from partialmix.simulation import MECHANISMS, preset, simulate
from partialmix.tdist import NU_MAX, NU_MIN, MixtureParams, factorize, log_t_density

from conftest import record_verdict

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def verdict(number, ok, detail):
    record_verdict(number, ok, detail)
    assert ok, detail


def random_spd(rng, p, corr=True):
    a = rng.standard_normal((p, p))
    s = a @ a.T + 0.5 * p * np.eye(p)
    return s if corr else np.diag(np.diag(s))


# 1 -------------------------------------------------------------------------


def test_c1_monotone_ascent():
    start = time.time()
    combos = [(m, pre) for m in aecm.METHODS for pre in ("low", "high")]
    bad, total, worst = [], 0, 0.0
    for i in range(200):
        method, pre = combos[i % len(combos)]
        sim = simulate(preset(pre, mechanism=MECHANISMS[i % 4], seed=1000 + i))
        try:
            res = fit(sim.data, 3, method, FitConfig(seed=i, n_starts=300))
        except FitError:
            continue
        total += 1
        steps = np.diff(res.loglik_trace)
        for t, dl in enumerate(steps):
            if dl < -1e-8 and not res.pd_repair_trace[t]:
                bad.append((method, pre, i, t, dl))
                worst = min(worst, dl)
                break
    elapsed = time.time() - start
    by_method = {m: sum(b[0] == m for b in bad) for m in aecm.METHODS}
    detail = (f"{len(bad)}/{total} traces decrease with repair inactive {by_method}, worst step {worst:.3g}; "
              f"{elapsed:.0f}s")
    verdict(1, not bad and elapsed <= 600, detail)


# 2 -------------------------------------------------------------------------


def test_c2_reduction_equivalence():
    worst = 0.0
    for r in range(20):
        sim = simulate(preset("low" if r % 2 else "high", lam=0.0, seed=2000 + r))
        init = aecm.rnd_em_initialize(sim.data, 3, "observed", FitConfig(seed=r, n_starts=20, n_finalists=1))[0]
        a = trace_states(sim.data, init, 10, "observed")
        b = trace_states(sim.data, init, 10, "full")
        for x, y in zip(a, b):
            for u, v in ((x.pi, y.pi), (x.mu, y.mu), (x.sigma, y.sigma), (x.nu, y.nu)):
                worst = max(worst, float(np.max(np.abs(u - v) / np.maximum(np.abs(v), 1e-300))))
    verdict(2, worst <= 1e-10, f"max relative difference over 20 datasets x 10 iterations: {worst:.2e}")


# 3 -------------------------------------------------------------------------


def joint_pdf(mu, sigma, nu):
    inv = np.linalg.inv(sigma)
    p = len(mu)
    logc = gammaln((nu + p) / 2) - gammaln(nu / 2) - p / 2 * np.log(nu * np.pi) - 0.5 * np.linalg.slogdet(sigma)[1]

    def f(y):
        d = (y - mu) @ inv @ (y - mu)
        return np.exp(logc - (nu + p) / 2 * np.log1p(d / nu))

    return f


def _cluster(mu, sigma, nu):
    return MixtureParams([1.0], [mu], [sigma], [nu]).clusters[0]


def test_c3_marginal_quadrature():
    rng = np.random.default_rng(3)
    worst = 0.0
    for c in range(50):
        p = 2 if c % 2 else 3
        mu = rng.standard_normal(p)
        sigma = random_spd(rng, p) / p
        nu = float(rng.uniform(3, 30))
        obs = np.sort(rng.choice(p, size=int(rng.integers(1, p)), replace=False))
        mis = np.setdiff1d(np.arange(p), obs)
        y = mu + rng.standard_normal(p)
        f = joint_pdf(mu, sigma, nu)

        def integrand(*zs):
            full = y.copy()
            full[mis] = zs
            return f(full)

        bounds = [(-np.inf, np.inf)] * len(mis)
        val, _ = integrate.nquad(integrand, bounds, opts={"epsabs": 0, "epsrel": 1e-10, "limit": 200})
        got = log_t_density(y[obs], _cluster(mu, sigma, nu), factorize(sigma, obs))
        worst = max(worst, abs(got - np.log(val)))
    verdict(3, worst < 1e-6, f"max |log marginal - log quadrature| over 50 configurations: {worst:.2e}")


# 4 -------------------------------------------------------------------------


def q2(y, mask, z, w, mu, sigma):
    total = 0.0
    for i in range(len(y)):
        o = np.flatnonzero(mask[i])
        s = sigma[np.ix_(o, o)]
        r = y[i, o] - mu[o]
        total += 0.5 * z[i] * (-np.linalg.slogdet(s)[1] - w[i] * r @ np.linalg.solve(s, r))
    return total


def chol_unpack(t, p):
    L = np.zeros((p, p))
    L[np.tril_indices(p)] = t
    L[np.diag_indices(p)] = np.exp(np.diag(L))
    return L @ L.T


def test_c4_stationarity():
    rng = np.random.default_rng(4)
    mu_err, sig_err = [], []
    for _ in range(20):
        n, p = 8, 2
        y = rng.standard_normal((n, p)) + rng.integers(0, 2, n)[:, None]
        mask = np.ones((n, p), bool)
        cells = rng.choice(n, size=2, replace=False)
        mask[cells, rng.integers(0, p, 2)] = False
        d = Dataset(y, mask)
        z, w = rng.uniform(0.2, 1.0, n), rng.uniform(0.5, 1.5, n)
        resp = Responsibilities(z[:, None], w[:, None])
        sigma = random_spd(rng, p)

        mu_hat = aecm.cm_update_mu(d, resp, 0)
        opt = minimize(lambda m: -q2(y, mask, z, w, m, sigma), mu_hat, method="BFGS", options={"gtol": 1e-12})
        mu_err.append(float(np.max(np.abs(mu_hat - opt.x))))

        mu0 = y[mask.all(1)].mean(0)
        sig_hat = aecm.cm_update_sigma(d, resp, mu0, 0, repair=False)
        L0 = np.linalg.cholesky(sig_hat)
        t0 = L0[np.tril_indices(p)].copy()
        t0[[0, 2]] = np.log(np.diag(L0))
        opt = minimize(lambda t: -q2(y, mask, z, w, mu0, chol_unpack(t, p)), t0, method="BFGS", options={"gtol": 1e-12})
        best = chol_unpack(opt.x, p)
        sig_err.append(float(np.linalg.norm(sig_hat - best) / np.linalg.norm(best)))
    ok_mu = sum(e <= 1e-4 for e in mu_err)
    ok_sig = sum(e <= 1e-3 for e in sig_err)
    detail = (f"mu within 1e-4 on {ok_mu}/20 (max {max(mu_err):.2e}); "
              f"sigma within 1e-3 rel on {ok_sig}/20 (max {max(sig_err):.2e})")
    verdict(4, ok_mu == 20 and ok_sig == 20, detail)


# 5 -------------------------------------------------------------------------


def test_c5_simulation_ordering():
    start = time.time()
    rows, ok = [], True
    for mech in MECHANISMS:
        ari = {"observed": [], "complete_case": []}
        for rep in range(20):
            sim = simulate(preset("low", mechanism=mech, seed=rep))
            for method in ari:
                try:
                    res = fit(sim.data, 3, method, FitConfig(seed=rep))
                    ari[method].append(adjusted_rand_index(sim.truth_labels, res.assignments))
                except FitError:
                    ari[method].append(0.0)
        obs, cc = float(np.median(ari["observed"])), float(np.median(ari["complete_case"]))
        ok &= obs >= cc and (mech != "MCAR" or obs >= 0.7)
        rows.append(f"{mech} {obs:.3f}/{cc:.3f}")
    elapsed = time.time() - start
    verdict(5, ok and elapsed <= 1800, "median ARI observed/complete-case: " + ", ".join(rows) + f"; {elapsed:.0f}s")


# 6 -------------------------------------------------------------------------


def test_c6_k_recovery():
    start = time.time()
    picks = []
    for rep in range(20):
        sim = simulate(preset("low", seed=rep))
        picks.append(select_k(sim.data, (1, 6), "observed", FitConfig(seed=rep)).best_k)
    hits = sum(k == 3 for k in picks)
    verdict(6, hits >= 12, f"BIC picked K=3 in {hits}/20 replicates (picks {picks}); {time.time() - start:.0f}s")


# 7 -------------------------------------------------------------------------


def test_c7_grb(grb_csv):
    d = load_csv(grb_csv, zero_missing=True, log10_transform=True)
    start = time.time()
    picks = {m: select_k(d, (1, 10), m, FitConfig(seed=1)).best_k for m in aecm.METHODS}
    ok = all(k == 6 for k in picks.values())
    soft = all(k in (5, 6, 7) for k in picks.values())
    tag = "" if ok else (" (soft pass, needs investigation)" if soft else "")
    verdict(7, ok and time.time() - start <= 7200, f"BIC-best K by method {picks}{tag}")


# 8 -------------------------------------------------------------------------


def brute_ari(a, b):
    n = len(a)
    both = sa = sb = 0
    for i, j in combinations(range(n), 2):
        x, y = a[i] == a[j], b[i] == b[j]
        both += x and y
        sa += x
        sb += y
    total = n * (n - 1) // 2
    expected = sa * sb / total
    top = (sa + sb) / 2
    if top == expected:
        return 1.0 if sa == sb == both else 0.0
    return (both - expected) / (top - expected)


def test_c8_ari():
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        a, b = rng.integers(0, rng.integers(1, 6), n), rng.integers(0, rng.integers(1, 6), n)
        mismatches += adjusted_rand_index(a, b) != brute_ari(a, b)
    mean = float(np.mean([adjusted_rand_index(rng.integers(0, 3, 50), rng.integers(0, 3, 50)) for _ in range(1000)]))
    verdict(8, mismatches == 0 and abs(mean) <= 0.02,
            f"{mismatches}/100 mismatches against pair enumeration; mean random ARI {mean:+.4f}")


# 9 -------------------------------------------------------------------------


def test_c9_cell_touch_count():
    sim = simulate(preset("low", seed=9))
    d = sim.data
    counter = CellCounter()
    fit(d, 3, "observed", FitConfig(seed=1, n_starts=100), counter=counter)
    per_pass = counter.cells / counter.passes
    ok = per_pass == d.n_observed and d.n_observed < d.n * d.p
    verdict(9, ok, f"{per_pass:.0f} cells per cluster pass; observed {d.n_observed}, n*p {d.n * d.p}")


# 10 ------------------------------------------------------------------------


def test_c10_nu_solver():
    rng = np.random.default_rng(10)
    worst, bracketed = 0.0, 0
    for _ in range(200):
        n = 50
        nu_true = float(rng.uniform(1, 60))
        w = rng.gamma(nu_true / 2, 2 / nu_true, (n, 1)) * rng.uniform(0.5, 1.5)
        resp = Responsibilities(np.ones((n, 1)), w)
        p_obs = rng.integers(1, 4, n)
        nu_old = np.array([float(rng.uniform(1, 100))])
        C = aecm.nu_data_term(resp, p_obs, nu_old)[0]
        lo, hi = aecm.nu_equation(NU_MIN, C), aecm.nu_equation(NU_MAX, C)
        if lo * hi >= 0:
            continue
        bracketed += 1
        nu = aecm.cm_update_nu(resp, p_obs, nu_old, "root")[0]
        worst = max(worst, abs(aecm.nu_equation(nu, C)))

    w_rng = np.random.default_rng(21)
    w = w_rng.gamma(7.5, 2 / 15, 2000)
    y = w_rng.standard_normal((2000, 3)) / np.sqrt(w)[:, None]
    d = Dataset(y, np.ones_like(y, bool))
    mix = MixtureParams([1.0], [np.zeros(3)], [np.eye(3)], [20.0])
    r = aecm.e_step(d, mix)
    root = aecm.cm_update_nu(r, d.observed_counts, mix.nu, "root")[0]
    approx = aecm.cm_update_nu(r, d.observed_counts, mix.nu, "approx")[0]
    ok = worst < 1e-8 and bracketed > 0 and abs(root - approx) <= 0.5
    verdict(10, ok, f"max residual {worst:.1e} over {bracketed} bracketed cases; root {root:.4f} vs approx {approx:.4f}")
