"""Acceptance gate: one summary line per criterion (see the terminal summary)."""

import json
import math
import time

import numpy as np
import pytest

from dislocgamma import cli
from dislocgamma import dislocations as dl
from dislocgamma.elliptic import helmholtz_study
from dislocgamma.fields import Domain, circulation
from dislocgamma.rigidity import KINDS, _trig_poly, probe_inequality, whitney_decompose
from dislocgamma.wells import normal_projection_form

TWO_PI = 2 * math.pi
LATTICE_XI = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)]
WELLS_2 = [np.eye(2), np.diag([1.3, 0.8])]
GAMMA_CFG = ('wells = [[[1, 0], [0, 1]], [[1.5, 0], [0, 0.7]]]\nmode = "iso"\nxi = [1, 0]\n'
             'eps = [1e-2, 3e-3, 1e-3]\nrho_exponent = 0.4\n')


def test_criterion_1_cell_slope(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for xi in [(1.0, 0.0), (0.6, 0.8), (2.0, -1.0)]:
        xi = np.array(xi)
        # log-polar spacing at the inner circle is delta * ds <= delta / 16
        psi = dl.cell_energy(xi, 1e-2, ds=1 / 16, n_theta=128)
        worst = max(worst, abs(psi / abs(math.log(1e-2)) / (xi @ xi / TWO_PI) - 1))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.03 and elapsed <= 60
    acceptance(1, ok, f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_hat_psi_routes(acceptance):
    worst = 0.0
    for U in WELLS_2:
        C = normal_projection_form(U)
        basis = dl.kernel_basis(C)
        for xi in LATTICE_XI:
            k = dl.combine_kernels(basis, xi).slope()
            r = dl.hat_psi(xi, C, "psi-nohalf").value
            worst = max(worst, abs(k - r) / k)
    C = normal_projection_form(WELLS_2[1])
    ratios = []
    for eps in (1e-20, 1e-25, 1e-30):
        rho = 1 / abs(math.log(eps))
        pe = dl.cell_energy_eps([1.0, 0.0], eps, rho, C)
        p = dl.solve_cell([1.0, 0.0], eps, 1.0, C).energy
        ratios.append(pe * abs(math.log(eps)) / p)
    ok = worst <= 0.05 and all(0.9 <= r <= 1.1 for r in ratios)
    acceptance(2, ok, f"route disagreement {worst:.2%}; psi_eps ratios "
                      + ", ".join(f"{r:.3f}" for r in ratios))
    assert ok


def test_criterion_3_interpolant(acceptance):
    C = normal_projection_form(WELLS_2[1])
    xi = np.array([1.0, 1.0])
    k = dl.combine_kernels(dl.kernel_basis(C), xi)
    zeta = dl.interpolant_zeta(k)
    beta = k.field()
    nx = np.linalg.norm(xi)
    th = TWO_PI * (np.arange(64) + 0.5) / 64
    curl_res = div_res = bound = 0.0
    for r in np.geomspace(1e-3, 3.0, 40):
        x, y = r * np.cos(th), r * np.sin(th)
        curl, div = dl.closure_curl_div(zeta, x, y, step=1e-3 * r)
        curl_res = max(curl_res, float(np.abs(curl).max()) * r * r / nx)
        if r < 0.25:
            div_res = max(div_res, float(np.abs(div).max()) * r * r / nx)
        bound = max(bound, float(np.linalg.norm(zeta(x, y), axis=(-2, -1)).max()) * r / nx)
    circ = max(np.linalg.norm(circulation(zeta, (0, 0), r, n=4096) - xi) / nx
               for r in (0.1, 0.7, 2.0))
    x, y = np.array([1.0, -1.2, 0.0, 3.0]), np.array([0.0, 0.5, -2.0, 4.0])
    outside = bool(np.array_equal(zeta(x, y), beta(x, y)))
    ok = curl_res <= 1e-6 and div_res <= 1e-6 and circ <= 1e-3 and outside and math.isfinite(bound)
    acceptance(3, ok, f"curl {curl_res:.1e}, div {div_res:.1e}, circulation {circ:.1e}, "
                      f"exact outside B1 {outside}, sup |zeta||x|/|xi| = {bound:.3f}")
    assert ok


def test_criterion_4_relaxation(acceptance):
    lat = dl.BurgersLattice((1.0, 0.0), (0.5, math.sqrt(3) / 2))
    Q = dl.self_energy_matrix(dl.kernel_basis(normal_projection_form(WELLS_2[1])))
    tab = dl.SelfEnergyTable(WELLS_2[1], np.eye(2), Q, lat)
    rng = np.random.default_rng(2024)
    hom = conv = trunc = 0.0
    for _ in range(100):
        a, b = rng.normal(size=(2, 2)) * 3
        t = rng.uniform(0, 10)
        pa, pb = dl.relax_phi(tab, a), dl.relax_phi(tab, b)
        hom = max(hom, abs(dl.relax_phi(tab, t * a) - t * pa) / max(t * pa, 1e-300))
        conv = max(conv, dl.relax_phi(tab, a + b) - pa - pb)
        r0 = lat.default_truncation
        trunc = max(trunc, abs(dl.relax_phi(tab, a, r0) - dl.relax_phi(tab, a, 2 * r0)))
    iso = dl.SelfEnergyTable(np.eye(2), np.eye(2), np.eye(2) / (2 * TWO_PI),
                             dl.BurgersLattice((1.0, 0.0), (0.0, 1.0)))
    single = True
    brute = 0.0
    for v in [(1, 0), (0, 1), (-2, 0), (0, -3)]:
        rel = dl.relax_phi(iso, v, detail=True)
        single &= len(rel.columns) == 1
    for xi in rng.normal(size=(20, 2)) * 3:
        brute = max(brute, abs(dl.relax_phi(iso, xi) - dl.brute_force_phi(iso, xi)))
    ok = hom <= 1e-12 and conv <= 1e-12 and trunc < 1e-9 and single and brute < 1e-12
    acceptance(4, ok, f"homogeneity {hom:.1e}, convexity excess {conv:.1e}, truncation {trunc:.1e}, "
                      f"single column {single}, brute force gap {brute:.1e}")
    assert ok


def test_criterion_5_helmholtz(acceptance):
    f = _trig_poly(np.random.default_rng(0), 4)
    rows = helmholtz_study(lambda x, y: f(x, y).reshape(np.shape(x) + (2, 2)), levels=(16, 32, 64))
    rec = max(r["reconstruction"] for r in rows)
    ident = max(max(r["div_Y"], r["curl_grad_v"]) for r in rows)
    orders = [r["order"] for r in rows[1:]]
    ok = rec <= 1e-8 and ident <= 1e-8 and min(orders) >= 1.8
    acceptance(5, ok, f"reconstruction {rec:.1e}, div Y / curl grad v {ident:.1e}, orders "
                      + ", ".join(f"{o:.2f}" for o in orders))
    assert ok


def test_criterion_6_rigidity(acceptance):
    drift = {}
    mono = True
    finite = True
    for kind in KINDS:
        c = []
        for n in (32, 64):
            r = probe_inequality(kind, n_samples=50, seed=0, domain=Domain.rectangle(0, 0, 1, 1, 1 / n))
            finite &= bool(np.all(np.isfinite(r.ratios[r.rhs >= 1e-12])))
            if r.single_well is not None:
                mono &= bool(np.all(r.lhs <= r.single_well["lhs"] + 1e-12))
                mono &= bool(np.all(r.rhs <= r.single_well["rhs"] + 1e-12))
            c.append(r.constant)
        drift[kind] = abs(c[1] / c[0] - 1)
    whitney = all(
        all(v for k, v in whitney_decompose(d).check().items() if k not in ("overlap", "count"))
        for d in (Domain.rectangle(0, 0, 1, 1, 1 / 32), Domain.disk((0, 0), 1, 1 / 32),
                  Domain.polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)], 1 / 32)))
    ok = finite and max(drift.values()) <= 0.25 and mono and whitney
    acceptance(6, ok, f"max refinement drift {max(drift.values()):.2%}, monotone {mono}, Whitney {whitney}")
    assert ok


@pytest.fixture(scope="module")
def gamma_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("gamma")
    cfg = base / "gamma.cfg"
    cfg.write_text(GAMMA_CFG)
    codes = [cli.main(["--config", str(cfg), "--out", str(base / o), "gamma"]) for o in ("a", "b")]
    return codes, base / "a", base / "b"


def test_criterion_7_gamma_trend(acceptance, gamma_runs):
    codes, out, _ = gamma_runs
    rep = json.loads((out / "gamma_report.json").read_text())
    runs = rep["runs"]
    phi = rep["phi"]
    a = codes[0] == 0 and all(r.get("valid") for r in runs)
    shares = [r["penalty_share"] for r in runs]
    b = all(y < x for x, y in zip(shares, shares[1:])) and shares[-1] < 0.05
    selfs = [r["self_per_mass"] / phi for r in runs]
    c = all(abs(s - 1) <= 0.2 for s in selfs)
    els = [r["elastic_over_limit"] for r in runs]
    d = all(abs(e - 1) <= 0.15 for e in els)
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)
    detail = (f"(a) {'PASS' if a else 'FAIL'} (b) {'PASS' if b else 'FAIL'} penalty share {fmt(shares)} "
              f"(c) {'PASS' if c else 'FAIL'} self/phi {fmt(selfs)} "
              f"(d) {'PASS' if d else 'FAIL'} elastic/limit {fmt(els)}")
    acceptance(7, a and b and c and d, detail)
    assert a and b and d, detail
    assert c, detail


def test_gamma_energy_gap_non_increasing(gamma_runs):
    _, out, _ = gamma_runs
    rows = (out / "gamma_trace.csv").read_text().splitlines()[1:]
    gaps = [abs(float(r.split(",")[2]) - float(r.split(",")[7])) for r in rows]
    assert all(y <= x for x, y in zip(gaps[-3:], gaps[-2:])), gaps


def test_criterion_8_determinism(acceptance, gamma_runs, tmp_path):
    codes, ga, gb = gamma_runs
    same = codes[0] == codes[1] and all(
        (ga / f).read_bytes() == (gb / f).read_bytes()
        for f in ("gamma_trace.csv", "liminf_shells.csv", "gamma_report.json"))
    cfg = tmp_path / "run.cfg"
    cfg.write_text('wells = [[[1, 0], [0, 1]], [[1.3, 0], [0, 0.8]]]\nn_samples = 5\n'
                   'deltas = [0.1, 0.03]\neps_sweep = [1e-6]\n')
    checked = 3
    for cmd in ("cell", "table", "phi", "probe", "helmholtz", "validate"):
        outs = []
        for o in ("a", "b"):
            d = tmp_path / f"{cmd}_{o}"
            assert cli.main(["--config", str(cfg), "--out", str(d), cmd]) == 0
            outs.append(d)
        for f in sorted(p.name for p in outs[0].iterdir()):
            same &= (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
            checked += 1
    acceptance(8, same, f"{checked} output files byte-identical across re-runs" if same else "outputs differ")
    assert same
