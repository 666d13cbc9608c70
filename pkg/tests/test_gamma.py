import json
import math

import numpy as np
import pytest

from dislocgamma import dislocations as dl
from dislocgamma.fields import Domain, StrainField, VectorMeasureSample
from dislocgamma.gamma import (
    AdmissibleStrain,
    DislocationMeasure,
    EnergyReport,
    InvalidConfiguration,
    RecoveryInfeasible,
    ScaleSchedule,
    ScheduleError,
    SingularAtom,
    build_recovery,
    constant_strain,
    curl_constraint_residual,
    energy_eps,
    gamma_liminf_diagnostic,
    kernel_basis_for,
    limit_energy,
    limit_strain,
    liminf_shell_count,
    polygon_area,
    validate_configuration,
)
from dislocgamma.wells import ElasticDensity, WellSet, identity_form, rotation

EPS = (1e-2, 3e-3, 1e-3)
SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
LATTICE = dl.BurgersLattice((1.0, 0.0), (0.0, 1.0))
WELLS = WellSet([np.eye(2), np.diag([1.5, 0.7])])
ISO = ElasticDensity(WELLS, "iso")


@pytest.fixture(scope="module")
def sched():
    return ScaleSchedule.from_rules(EPS)


@pytest.fixture(scope="module")
def omega():
    return Domain.rectangle(-0.5, -0.5, 1.5, 1.5, 1 / 64)


@pytest.fixture(scope="module")
def recovery(omega, sched):
    return build_recovery(omega, SQUARE, [1.0, 0.0], sched, 0, ISO, LATTICE)


def iso_table():
    return dl.SelfEnergyTable(np.eye(2), np.eye(2), np.eye(2) / (4 * math.pi), LATTICE)


# -- schedule --------------------------------------------------------------

def test_schedule_defaults(sched):
    eps, rho = sched.eps[1], sched.rho[1]
    assert rho == pytest.approx(eps ** 0.4)
    assert sched.eta[1] == pytest.approx(eps * abs(math.log(eps)) / rho)
    assert all(c.passed for c in sched.checks())
    sched.validate()


def test_schedule_eta_violation_names_bound():
    s = ScaleSchedule.from_rules(EPS, eta=[0.5, 0.5, 0.5])
    with pytest.raises(ScheduleError, match=r"eta_upper\[0\]"):
        s.validate()
    low = ScaleSchedule.from_rules(EPS, eta=[1e-9] * 3)
    with pytest.raises(ScheduleError, match=r"eta_lower\[0\]"):
        low.validate()


@pytest.mark.parametrize("args", [
    ((1e-2, 3e-2), (0.1, 0.2), (0.1, 0.1)),
    ((1e-2,), (1e-3,), (0.1,)),
    ((), (), ()),
    ((1e-2,), (0.1,), (0.1, 0.2)),
])
def test_schedule_errors(args):
    with pytest.raises(ScheduleError):
        ScaleSchedule(*args)


def test_schedule_index(sched):
    assert sched.index(3e-3) == 1
    with pytest.raises(KeyError):
        sched.index(0.5)


def test_shell_count():
    eps, rho = 1e-3, 1e-3 ** 0.4
    kj = (0.9 * math.log(1e3) - abs(math.log(rho))) / math.log(4)
    assert liminf_shell_count(eps, rho) == math.floor(kj) + 1


# -- measures and validation -----------------------------------------------

def test_measure_total_variation():
    mu = DislocationMeasure((((0, 0), (3, 4)), ((1, 1), (1, 0))), 0.01)
    assert mu.total_variation() == pytest.approx(0.06)
    assert len(mu) == 2


def test_validate_empty(omega, sched):
    diag = validate_configuration(DislocationMeasure((), EPS[0]), constant_strain(omega, np.eye(2), EPS[0]), sched)
    assert diag.passed and diag["curl"].value == 0


def _one_atom(omega, sched, centers, eps=EPS[0], with_singular=True):
    basis = kernel_basis_for(identity_form())
    zeta = dl.interpolant_zeta(dl.combine_kernels(basis, [1.0, 0.0]))
    atoms = tuple(SingularAtom(c, (1.0, 0.0), eps, 0.5, 0.1, zeta) for c in centers) if with_singular else ()
    beta = AdmissibleStrain(np.eye(2), StrainField(omega, np.zeros(omega.shape + (2, 2))),
                            eps * abs(math.log(eps)), eps, atoms)
    mu = DislocationMeasure(tuple((c, (1.0, 0.0)) for c in centers), eps)
    return mu, beta


def test_validate_one_atom_circulation(omega, sched):
    mu, beta = _one_atom(omega, sched, [(0.5, 0.5)])
    diag = validate_configuration(mu, beta, sched, LATTICE)
    assert diag["circulation"].passed and diag["circulation"].value < 1e-3
    assert diag["lattice"].passed and diag["separation"].passed


def test_validate_identity_with_atom_fails(omega, sched):
    mu, beta = _one_atom(omega, sched, [(0.5, 0.5)], with_singular=False)
    assert not validate_configuration(mu, beta, sched)["circulation"].passed


def test_validate_close_atoms_fail(omega, sched):
    rho = sched.rho[0]
    mu, beta = _one_atom(omega, sched, [(0.3, 0.5), (0.3 + rho, 0.5)])
    diag = validate_configuration(mu, beta, sched)
    assert not diag["separation"].passed
    assert "separation" in [c.name for c in diag.failed()]


def test_validate_atom_near_boundary_fails(omega, sched):
    mu, beta = _one_atom(omega, sched, [(1.45, 0.5)])
    assert not validate_configuration(mu, beta, sched)["cores_in_domain"].passed
    with pytest.raises(InvalidConfiguration):
        energy_eps(mu, beta, sched)


def test_validate_off_schedule(omega, sched):
    mu = DislocationMeasure((), 0.5)
    assert not validate_configuration(mu, constant_strain(omega, np.eye(2), 0.5), sched).passed


# -- energy ----------------------------------------------------------------

@pytest.mark.parametrize("theta", [0.0, 0.4, 2.0])
def test_energy_zero_on_rotated_well(omega, sched, theta):
    dens = ElasticDensity(WELLS)
    rep = energy_eps(DislocationMeasure((), EPS[0]), constant_strain(omega, rotation(theta), EPS[0]), sched,
                     density=dens)
    assert rep.total == pytest.approx(0, abs=1e-20)


def _bar(x, y):
    # gradient of (sin(pi x) y, x^2 y / 2 - 0.3 y): curl free
    b = np.zeros(np.shape(x) + (2, 2))
    b[..., 0, 0] = np.pi * np.cos(np.pi * x) * y
    b[..., 0, 1] = np.sin(np.pi * x)
    b[..., 1, 0] = x * y
    b[..., 1, 1] = 0.5 * x * x - 0.3
    return b


def test_energy_linearization(sched):
    d = Domain.rectangle(0, 0, 1, 1, 1 / 32)
    dens = ElasticDensity(WellSet([np.eye(2)]))
    bar = StrainField.from_function(d, _bar)
    C = dens.hessian(0)
    from dislocgamma.wells import apply_form

    limit = 0.5 * float(np.sum(d.node_weights() * apply_form(C, bar.values, bar.values)))
    errs = []
    for eps in EPS:
        beta = AdmissibleStrain(np.eye(2), bar, eps * abs(math.log(eps)), eps)
        rep = energy_eps(DislocationMeasure((), eps), beta, sched, density=dens)
        errs.append(abs(rep.elastic / limit - 1))
        assert rep.total >= 0
    assert errs[-1] < 0.1 and errs[-1] < errs[0]


def test_energy_subdomain_additive(recovery, sched):
    mu, beta = recovery.mu, recovery.beta
    full = energy_eps(mu, beta, sched, density=ISO, lattice=LATTICE)
    left = energy_eps(mu, beta, sched, density=ISO, subdomain=lambda x, y: x < 0.5, check=False)
    right = energy_eps(mu, beta, sched, density=ISO, subdomain=lambda x, y: x >= 0.5, check=False)
    for f in ("elastic", "self_energy", "interaction", "penalty", "total"):
        assert getattr(left, f) + getattr(right, f) == pytest.approx(getattr(full, f), rel=1e-10, abs=1e-12)


def test_energy_report_sum_and_json():
    r = EnergyReport.build(0.1, 0.2, -0.05, 1e-3, eps=0.01)
    assert r.total == math.fsum([0.1, 0.2, -0.05, 1e-3])
    assert json.loads(r.to_json())["feasible"] is True
    assert EnergyReport.build(1, 1, 0, 0, feasible=False).total is None


def test_energy_eps_mismatch(omega, sched):
    with pytest.raises(InvalidConfiguration):
        energy_eps(DislocationMeasure((), EPS[0]), constant_strain(omega, np.eye(2), EPS[0]), sched, eps=EPS[1])


# -- limit functional ------------------------------------------------------

def test_limit_energy_zero():
    d = Domain.rectangle(0, 0, 1, 1, 1 / 16)
    rep = limit_energy(VectorMeasureSample(d), StrainField(d, np.zeros(d.shape + (2, 2))), np.eye(2),
                       np.eye(2), iso_table())
    assert rep.total == 0 and rep.feasible


def test_limit_energy_curl_violation_infeasible():
    d = Domain.rectangle(0, 0, 1, 1, 1 / 16)
    X, Y = d.coords()
    b = np.zeros(d.shape + (2, 2))
    b[..., 0, 1] = X  # curl row 0 = 1
    rep = limit_energy(VectorMeasureSample(d), StrainField(d, b), np.eye(2), np.eye(2), iso_table())
    assert not rep.feasible and rep.total is None


def test_limit_energy_parts_and_quadratic():
    d = Domain.rectangle(-0.5, -0.5, 1.5, 1.5, 1 / 32)
    xi = np.array([1.0, 0.0])
    mu, beta = limit_strain(d, SQUARE, xi)
    assert curl_constraint_residual(beta, mu) < 0.05
    t = iso_table()
    rep = limit_energy(mu, beta, np.eye(2), np.eye(2), t)
    assert rep.feasible
    w = d.node_weights()
    assert rep.elastic == pytest.approx(0.5 * float(np.sum(w[..., None, None] * beta.values ** 2)), rel=1e-12)
    assert rep.self_energy == pytest.approx(polygon_area(SQUARE) * dl.relax_phi(t, xi), rel=1e-9)
    for k in (2.0, 3.0):
        r2 = limit_energy(mu, StrainField(d, k * beta.values), np.eye(2), np.eye(2), t)
        assert r2.elastic == pytest.approx(k * k * rep.elastic, rel=1e-12)
        assert r2.self_energy == rep.self_energy


# -- recovery --------------------------------------------------------------

def test_recovery_zero_burgers(omega, sched):
    rec = build_recovery(omega, SQUARE, [0.0, 0.0], sched, 1, ISO, LATTICE)
    assert len(rec.mu) == 0
    rep = energy_eps(rec.mu, rec.beta, sched, density=ISO)
    assert rep.self_energy == 0 and rep.interaction == 0
    assert rep.total == pytest.approx(rep.elastic + rep.penalty)


def test_recovery_validates_and_counts(recovery, sched):
    diag = validate_configuration(recovery.mu, recovery.beta, sched, LATTICE)
    assert diag.passed, [c.name for c in diag.failed()]
    assert abs(len(recovery.mu) - recovery.target_count) <= 2
    assert recovery.Lambda == pytest.approx(1.0)
    assert 0 < recovery.gamma < 1


def test_recovery_deterministic(omega, sched, recovery):
    again = build_recovery(omega, SQUARE, [1.0, 0.0], sched, 0, ISO, LATTICE)
    assert np.array_equal(again.mu.centers, recovery.mu.centers)
    assert np.array_equal(again.beta.smooth.values, recovery.beta.smooth.values)


def test_recovery_infeasible_exponent(omega):
    # rho = eps^0.9 leaves no admissible interpolation exponent gamma_j
    bad = ScaleSchedule.from_rules(EPS, rho_exponent=0.9)
    with pytest.raises(RecoveryInfeasible):
        build_recovery(omega, SQUARE, [1.0, 0.0], bad, 0, ISO, LATTICE)


def test_liminf_shells(recovery, sched):
    rows = gamma_liminf_diagnostic(recovery.mu, recovery.beta, sched, 0, ISO)
    assert rows
    assert all(r.r_in >= sched.eps[0] for r in rows)
    ratios = np.array([r.ratio for r in rows])
    assert np.all((ratios > 0.8) & (ratios < 1.3))
