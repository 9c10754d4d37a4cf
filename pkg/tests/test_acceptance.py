"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The heavy criteria (4, 5, 6, 9, 10) solve full scattering problems and take
minutes; together the file runs in about 15 minutes on one core.
"""
import time
import warnings

import numpy as np
import pytest
from scipy import integrate

from padetopo import bem, cli, config as C, fmm, oracles, pade, sensitivity as S, subdivision as SD
from padetopo import optimizer as O
from padetopo.mesh import build_circle
from padetopo.oracles import cylinder_total_field
from padetopo.scenarios import dt_validation_points, dt_validation_scatterers, four_scatterers

import test_pade
import test_sensitivity as TS

PW = bem.PlaneWave((0.0, 1.0))
BAND = (2.5, 3.5)
ORIGIN = np.zeros((1, 2))


# ---------------------------------------------------------------------------
# 1. Pade round trip
# ---------------------------------------------------------------------------

def test_criterion_1_pade_round_trip(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(200):
        M, N = rng.integers(1, 6, 2)
        m, n = rng.integers(0, M + 1), rng.integers(0, N + 1)
        p, q = test_pade.random_rational(rng, m, n) if n else (rng.normal(size=m + 1) + 0j, np.ones(1))
        a = test_pade.taylor_of_rational(p, q, M + N)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pa = pade.fit_with_fallback(a, M, N, 0.0)
        z = rng.uniform(-1, 1, 20)
        ref = pade.horner(p, z) / pade.horner(q, z)
        worst = max(worst, np.max(np.abs(pa(z) - ref) / np.abs(ref)))
    elapsed = time.perf_counter() - t0

    pa = pade.fit_with_fallback(test_pade.EVEN_SERIES_TAYLOR, 5, 5, 2.0)
    x = np.linspace(-0.3, 4.3, 20) + 0.0123
    ref = (-1 - (x - 2) ** 2 / 2) / (1 - (x - 2) ** 2 / 2 - (x - 2) ** 4 / 2)
    even_err = np.max(np.abs(pa(x) - ref) / np.abs(ref))
    ok = worst <= 1e-9 and even_err <= 1e-9 and elapsed < 1.0
    acceptance(1, ok, f"200 random fits max rel {worst:.1e}, closed-form [5,5] example {even_err:.1e}, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. closed-form band integral
# ---------------------------------------------------------------------------

def test_criterion_2_band_integral(acceptance):
    rng = np.random.default_rng(7)
    w0, w1, w2 = 3.0, 2.5, 3.5
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(0, 2 * n + 1))
        # conjugate pole pairs at least 0.1 bandwidths from the band
        top = w0 + rng.uniform(-1.5, 1.5, n) + 1j * rng.uniform(0.1, 1.0, n)
        poles = np.concatenate([top, top.conj()])
        q = np.real(np.poly(poles - w0)[::-1])
        q /= q[0]
        p = rng.normal(size=m + 1)
        got = pade.integrate_pf(pade.partial_fractions(p, q, w0), w1, w2)
        ref = integrate.quad(lambda w: pade.horner(p, w - w0) / pade.horner(q, w - w0), w1, w2,
                             epsabs=0, epsrel=1e-13, limit=200)[0]
        worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    acceptance(2, ok, f"1000 cases max rel {worst:.1e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. BEM against the cylinder series, jets against frequency differences
# ---------------------------------------------------------------------------

def test_criterion_3_bem(acceptance):
    m = build_circle([0.0, 0.0], 1.0, 200)
    th = np.arctan2(m.midpoint[:, 1], m.midpoint[:, 0])
    errs, times = [], []
    for k in (1.0, 3.0):
        t0 = time.perf_counter()
        u = bem.solve_primal(bem.assemble(m, k, 0), PW).u[0, :, 0]
        times.append(time.perf_counter() - t0)
        ref = cylinder_total_field(k, 1.0, 1.0, th)
        errs.append(np.linalg.norm(u - ref) / np.linalg.norm(ref))

    # Taylor coefficients to order 6 against a 17-node interpolation of plain solves;
    # h = 0.04 keeps the round-off amplification of the order-6 coefficient small
    w0, K, h = 3.0, 6, 0.04
    pts = np.array([[0.2, 2.0], [-2.0, -1.5], [1.5, -1.5]])
    jets = bem.eval_field(bem.solve_primal(bem.assemble(m, w0, K), PW), pts).u[:, :, 0]
    ws = w0 + h * np.arange(-8, 9)
    vals = np.array([bem.solve_frequency(m, w, PW, pts) for w in ws])
    coef = np.linalg.solve(np.vander(ws - w0, 17, increasing=True), vals)
    jet_err = np.max(np.abs(coef[: K + 1] - jets) / np.abs(jets))
    ok = max(errs) < 0.01 and max(times) < 5 and jet_err <= 1e-3
    acceptance(3, ok, f"L2 rel {errs[0]:.1e} (ka=1), {errs[1]:.1e} (ka=3), {max(times):.2f} s/case, "
                      f"jets to order 6 rel {jet_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 4. accuracy windows on the four-scatterer configuration
# ---------------------------------------------------------------------------

def test_criterion_4_windows(acceptance, tmp_path):
    cfg = C.default_config("sweep-compare")
    cfg.sweep_compare.orders = [8]
    cfg.sweep_compare.grid = [1.8, 4.2, 121]
    t0 = time.perf_counter()
    win = cli.run_sweep_compare(cfg.validate(), tmp_path)
    elapsed = time.perf_counter() - t0
    width = {k: hi - lo for k, (lo, hi) in win.items()}
    wi, wd, wt = width[("indirect", 8)], width[("direct", 8)], width[("taylor", 8)]
    ok = wi > wd > wt and elapsed < 120
    acceptance(4, ok, f"window widths indirect {wi:.2f} > direct {wd:.2f} > Taylor-8 {wt:.2f}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5 and 6. objective and topological derivative on the validation configuration
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def validation():
    mesh = dt_validation_scatterers()
    pts = dt_validation_points()
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = SD.sweep(mesh, BAND, PW, ORIGIN, pts, 4, 4, 1e-2)
    return mesh, pts, res, time.perf_counter() - t0


def test_criterion_5_objective(acceptance, validation):
    mesh, _, res, t_sweep = validation
    t0 = time.perf_counter()
    J_ref, _, _ = oracles.trapezoid_objective(mesh, BAND, PW, ORIGIN, 100)
    elapsed = t_sweep + time.perf_counter() - t0
    rel = abs(res.J - J_ref) / abs(J_ref)
    ok = rel <= 1e-2 and res.plan.n_div == 3 and elapsed < 300
    acceptance(5, ok, f"J {res.J:.6f} vs trapezoid {J_ref:.6f} (rel {rel:.1e}), N_div {res.plan.n_div}, "
                      f"{elapsed:.0f} s")
    assert ok


def test_criterion_6_topological_derivative(acceptance, validation):
    mesh, pts, res, t_sweep = validation
    t0 = time.perf_counter()
    fd, _, _ = S.fd_topological_derivative(mesh, pts, 0.01, BAND, PW, ORIGIN, n_quad=40)
    elapsed = t_sweep + time.perf_counter() - t0
    agree = np.abs(res.DJ - fd) <= np.maximum(0.01, 0.02 * np.abs(fd))
    ok = agree.sum() >= 8 and elapsed < 1200
    acceptance(6, ok, f"{agree.sum()}/31 points agree, max dev {np.abs(res.DJ - fd).max():.2e} "
                      f"of max |D_T J| {np.abs(fd).max():.2e}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 7. chain-rule stages
# ---------------------------------------------------------------------------

def _stage_remainders(seed):
    """Directional remainders of every chain-rule stage for one random jet set."""
    W0 = TS.W0
    a, b = TS.sample_jets(seed)
    b = b[:, 0]
    pa = pade.fit_with_fallback(a, 4, 4, W0)
    Dp, Dq = S.dt_pade_coeffs(pa, a, b)
    Dph, Dqh = S.dt_hat_coeffs(pa.p, pa.q, Dp, Dq)
    ph, qh = pade.hat_coefficients(pa.p, pa.q)
    r, prem, Dr, Dprem = S.dt_divide(ph, qh, Dph, Dqh)
    u_poles = W0 + pade.roots_dka(pa.q)
    Da = S.dt_poles(pa.q, Dq, u_poles, W0)
    ft = pade.indirect_fit(a, 4, 4, W0)
    dt = S.dt_partial_fractions(ft, a, b)
    pf = ft.pf

    def coeffs(h):
        p, q, _ = pade.fit(a + h * b, 4, 4, warn=False)
        return np.concatenate([p, q])

    def hats(h):
        return np.concatenate(pade.hat_coefficients(pa.p + h * Dp, pa.q + h * Dq))

    def division(h):
        return np.concatenate(pade.poly_divide(ph + h * Dph, qh + h * Dqh))

    def poles(h):
        roots = W0 + pade.roots_dka(pa.q + h * Dq)
        return np.array([roots[np.argmin(np.abs(roots - z))] for z in u_poles])

    def residues(h):
        return pade.residues(pf.p_rem + h * dt_prem, ft.rf.q_hat[-1] + h * dt.Dq_hat[-1], pf.poles + h * dt.Dpoles,
                             W0)

    def integral(h):
        pf_h = pade.PartialFractionForm(W0, pf.r + h * dt.Dr, pf.poles + h * dt.Dpoles,
                                        pf.residues + h * dt.Dresidues, pf.p_rem)
        return np.array([pade.integrate_pf(pf_h, *BAND)])

    _, _, _, dt_prem = S.dt_divide(ft.rf.p_hat, ft.rf.q_hat, dt.Dp_hat, dt.Dq_hat)
    return {
        "coeffs": (coeffs, np.concatenate([Dp, Dq])),
        "hat-coeffs": (hats, np.concatenate([Dph, Dqh])),
        "division": (division, np.concatenate([Dr, Dprem])),
        "poles": (poles, Da[: len(u_poles)]),
        "residues": (residues, dt.Dresidues),
        "integral": (integral, np.array([S.dt_objective(pf, dt, *BAND)])),
    }


def _separated_seeds(count, min_gap=0.25):
    """Seeds whose [4,4] u-poles are simple with pairwise gaps >= ``min_gap`` (the chain-rule precondition)."""
    seeds, seed = [], 0
    while len(seeds) < count:
        a, _ = TS.sample_jets(seed)
        z = pade.roots_dka(pade.fit_with_fallback(a, 4, 4, TS.W0).q)
        gaps = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() >= min_gap:
            seeds.append(seed)
        seed += 1
    return seeds


def test_criterion_7_chain_rule_stages(acceptance):
    t0 = time.perf_counter()
    failed = []
    seeds = _separated_seeds(5)
    for seed in seeds:
        for name, (stage, d) in _stage_remainders(seed).items():
            rem, scale = TS.remainders(stage, d)
            try:
                TS.assert_second_order(rem, scale)
            except AssertionError:
                failed.append(f"{name}@{seed}")
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 30
    acceptance(7, ok, f"6 stages x 5 jet sets (seeds {seeds}), O(h^2) remainders at h=1e-5..1e-7"
                      f"{'; failing: ' + ', '.join(failed) if failed else ''}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 8. FMM against the dense jet matvec
# ---------------------------------------------------------------------------

def test_criterion_8_fmm(acceptance):
    t0 = time.perf_counter()
    m = four_scatterers()
    op = bem.assemble(m, 3.0, 8)
    rng = np.random.default_rng(4)
    v = rng.normal(size=(9, m.n_elements)) + 1j * rng.normal(size=(9, m.n_elements))
    got = fmm.JetFMM(m, 3.0, 8).matvec(v)
    ref = bem.jet_matvec(op.W, v[..., None])[..., 0]
    err = np.abs(got - ref).max()
    elapsed = time.perf_counter() - t0
    ok = m.n_elements == 400 and err <= 1e-6 and elapsed < 30
    acceptance(8, ok, f"400 elements, orders 0..8, max abs diff {err:.1e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 9-10. Shield optimisation across Pade degrees
# ---------------------------------------------------------------------------

DEGREES = (2, 3, 4, 5)


@pytest.fixture(scope="module")
def shield_runs():
    """Reduced shield runs for every degree at both tolerances, keyed by (delta, M)."""
    cfg = C.default_config("optimise-shield")
    runs = {}
    t0 = time.perf_counter()
    for delta in (1e-4, 1e-2):
        for M in DEGREES:
            s = cli.optimiser_settings(cfg)
            s.degrees, s.delta = (M, M), delta
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                hist, final = O.run(s)
            runs[delta, M] = (hist, final)
    return runs, time.perf_counter() - t0, cfg


def _rel_gap(a, b):
    a, b = np.asarray(a), np.asarray(b)
    n = min(a.size, b.size)
    return np.abs(a[:n] - b[:n]) / np.maximum(np.abs(b[:n]), 1e-300)


def test_criterion_9_optimiser_histories(acceptance, shield_runs):
    runs, elapsed, cfg = shield_runs
    J = {k: np.asarray(h.J) for k, (h, _) in runs.items()}
    size_ok = all(h.records and max(r.n_elements for r in h.records) <= 600 and len(h.records) <= 40
                  for h, _ in runs.values())
    # delta = 1e-4: every degree follows the [5,5] history within 1% at every step
    same = max(_rel_gap(J[1e-4, M], J[1e-4, 5]).max() for M in DEGREES)
    lengths = {J[k].size for k in J if k[0] == 1e-4}
    # delta = 1e-2: some low-degree run leaves some high-degree run by more than 1%
    split = max(_rel_gap(J[1e-2, lo], J[1e-2, hi]).max() for lo in (2, 3) for hi in (4, 5))
    ok = same <= 1e-2 and len(lengths) == 1 and split > 1e-2 and size_ok and elapsed < 7200
    acceptance(9, ok, f"{cfg.optimiser.max_steps} steps; delta=1e-4 max rel spread {same:.2e}; "
                      f"delta=1e-2 max low/high gap {split:.2e}; "
                      f"max elements {max(r.n_elements for h, _ in runs.values() for r in h.records)}; "
                      f"{elapsed:.0f} s for 8 runs")
    assert ok


def _fmt(values):
    return "/".join(f"{v:.3g}" for v in values)


def _costs(runs, delta):
    hists = [runs[delta, M][0] for M in DEGREES]
    n_div = [float(np.mean(h.n_div)) for h in hists]
    interval = [float(np.mean([r.interval_time for r in h.records])) for h in hists]
    step = [float(np.mean([r.wall_time for r in h.records])) for h in hists]
    return n_div, interval, step


def _non_monotone(values):
    d = np.diff(values)
    return bool(np.any(d > 0) and np.any(d < 0))


def test_criterion_10_cost_trends(acceptance, shield_runs):
    runs, _, _ = shield_runs
    trends, notes = True, []
    for delta in (1e-4, 1e-2):
        n_div, interval, step = _costs(runs, delta)
        trends &= all(a >= b for a, b in zip(n_div, n_div[1:]))
        trends &= all(a <= b for a, b in zip(interval, interval[1:]))
        notes.append(f"delta={delta:g}: N_div {_fmt(n_div)}, interval {_fmt(interval)} s, step {_fmt(step)} s"
                     f" ({'non-monotone' if _non_monotone(step) else 'monotone'})")
    # the per-step minimum needs two degrees with equal N_div, which the reduced shield shows at delta=1e-2
    step_ok = _non_monotone(_costs(runs, 1e-2)[2])
    ok = trends and step_ok
    acceptance(10, ok, "degrees [2,2]..[5,5]; " + "; ".join(notes))
    assert ok
