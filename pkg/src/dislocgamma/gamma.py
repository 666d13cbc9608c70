"""Admissible dislocation configurations, the scaled energy and recovery sequences.

Strains at scale eps are stored in composite form

    beta = U + s B + zeta,    s = eps |log eps|,

with ``B`` a smooth grid field on the reference domain and ``zeta`` a sum of
analytic singular closures, one per dislocation, each supported in a disk
around its core.  Cores of radius eps are far below grid resolution, so
energies are integrated on the grid for the smooth part and by polar
quadrature (graded in log r) inside each singular support.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from . import dislocations as dl
from .elliptic import PoissonProblem, solve_poisson
from .fields import (
    Domain,
    ScalarField,
    StrainField,
    VectorMeasureSample,
    _polygon_contains,
    bilinear,
    discrete_curl,
    discrete_div,
    gradient,
    partial,
)
from .wells import J, ElasticDensity, WellSet, apply_form, identity_form

LIMINF_DELTA = 0.25
CURL_TOL = 0.1
CIRC_TOL = 1e-2


class ScheduleError(ValueError):
    """A scale schedule violates a required bound."""


class InvalidConfiguration(ValueError):
    """A configuration fails validation."""


class RecoveryInfeasible(RuntimeError):
    """The target region cannot host the required number of dislocations."""

    def __init__(self, msg: str, feasible_max: int):
        super().__init__(msg)
        self.feasible_max = feasible_max


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""


# ---------------------------------------------------------------------------
# scale schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleSchedule:
    """Scales eps_j with hard-core radii rho_j, penalty weights eta_j and the
    exponent gamma of the admissible eta range."""

    eps: tuple
    rho: tuple
    eta: tuple
    gamma: float = 0.25

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        rho = tuple(float(r) for r in self.rho)
        eta = tuple(float(e) for e in self.eta)
        if not (len(eps) == len(rho) == len(eta)) or not eps:
            raise ScheduleError("eps, rho and eta must be non-empty lists of equal length")
        if any(not 0 < e < 1 for e in eps):
            raise ScheduleError("every eps must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ScheduleError("eps must be strictly decreasing")
        if any(r <= e for e, r in zip(eps, rho)):
            raise ScheduleError("rho must exceed eps")
        if not 0 < self.gamma < 1:
            raise ScheduleError("gamma must lie in (0, 1)")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_rules(cls, eps: Sequence[float], rho_exponent: float = 0.4,
                   eta: Optional[Sequence[float]] = None, gamma: float = 0.25) -> "ScaleSchedule":
        """rho = eps^rho_exponent and, by default, eta = eps |log eps| / rho."""
        eps = tuple(float(e) for e in eps)
        rho = tuple(e ** rho_exponent for e in eps)
        if eta is None:
            eta = tuple(e * abs(math.log(e)) / r for e, r in zip(eps, rho))
        return cls(eps, rho, tuple(eta), gamma)

    def __len__(self) -> int:
        return len(self.eps)

    def log_eps(self, j: int) -> float:
        return abs(math.log(self.eps[j]))

    def eta_bounds(self, j: int) -> tuple[float, float]:
        e = self.eps[j]
        return e * abs(math.log(e)) / self.rho[j], e ** self.gamma

    def index(self, eps: float) -> int:
        for j, e in enumerate(self.eps):
            if math.isclose(e, eps, rel_tol=1e-12):
                return j
        raise KeyError(f"eps = {eps!r} is not in the schedule")

    def checks(self) -> list[Check]:
        out = []
        for s in (0.5, 0.9):
            q = [r / e ** s for e, r in zip(self.eps, self.rho)]
            ok = all(b > a for a, b in zip(q, q[1:]))
            out.append(Check(f"rho_over_eps^{s}_increasing", ok, q[-1], q[0]))
        q = [math.log(1 / e) * r * r for e, r in zip(self.eps, self.rho)]
        out.append(Check("logeps_rho2_decreasing", all(b < a for a, b in zip(q, q[1:])), q[-1], q[0]))
        for j in range(len(self)):
            lo, hi = self.eta_bounds(j)
            out.append(Check(f"eta_lower[{j}]", self.eta[j] >= lo * (1 - 1e-12), self.eta[j], lo,
                             "eta >= eps|log eps|/rho"))
            out.append(Check(f"eta_upper[{j}]", self.eta[j] <= hi * (1 + 1e-12), self.eta[j], hi,
                             "eta <= eps^gamma"))
        return out

    def validate(self) -> None:
        """Raise on a violated eta range; rho growth conditions are monitored only."""
        for c in self.checks():
            if c.name.startswith("eta") and not c.passed:
                raise ScheduleError(f"{c.name}: {c.detail} violated "
                                    f"(eta = {c.value:.6g}, bound = {c.bound:.6g})")


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DislocationMeasure:
    """mu = sum eps xi_i delta_{x_i}."""

    atoms: tuple
    eps: float

    def __post_init__(self):
        atoms = tuple((tuple(map(float, p)), tuple(map(float, x))) for p, x in self.atoms)
        object.__setattr__(self, "atoms", atoms)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p for p, _ in self.atoms], float).reshape(-1, 2)

    @property
    def burgers(self) -> np.ndarray:
        return np.array([x for _, x in self.atoms], float).reshape(-1, 2)

    def total_variation(self) -> float:
        """|mu|(Omega) = eps sum |xi_i|."""
        return self.eps * float(np.sum(np.linalg.norm(self.burgers, axis=1)))

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True, eq=False)
class SingularAtom:
    """eps^(1-g) zeta((x - c)/eps^g) f(|x - c|/radius), supported in B_radius(c)."""

    center: tuple
    xi: tuple
    eps: float
    gamma: float
    radius: float
    zeta: Callable = field(repr=False)

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        dx, dy = x - self.center[0], y - self.center[1]
        r = np.hypot(dx, dy)
        out = np.zeros(x.shape + (2, 2))
        m = r < self.radius
        if np.any(m):
            sc = self.eps ** self.gamma
            z = self.zeta(dx[m] / sc, dy[m] / sc)
            out[m] = self.eps ** (1 - self.gamma) * z * dl.quintic_ramp(r[m] / self.radius)[:, None, None]
        return out


def _fd(fn: Callable, x, y, step):
    """Row curl and row divergence by fourth-order differences with per-point steps."""
    c = (1 / 12, -2 / 3, 2 / 3, -1 / 12)
    offs = (-2, -1, 1, 2)
    st = np.asarray(step, float) * np.ones_like(x)
    dx = sum(w * fn(x + o * st, y) for w, o in zip(c, offs)) / st[..., None, None]
    dy = sum(w * fn(x, y + o * st) for w, o in zip(c, offs)) / st[..., None, None]
    return dx[..., :, 1] - dy[..., :, 0], dx[..., :, 0] + dy[..., :, 1]


@dataclass(frozen=True, eq=False)
class AdmissibleStrain:
    """beta = U + scale * B + sum of singular atoms outside the cores, I on cores."""

    U: np.ndarray
    smooth: StrainField
    scale: float
    eps: float
    atoms: tuple = ()

    def singular(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        out = np.zeros(x.shape + (2, 2))
        for a in self.atoms:
            out += a(x, y)
        return out

    def smooth_at(self, x, y) -> np.ndarray:
        return bilinear(self.smooth, np.asarray(x, float), np.asarray(y, float), strict=False)

    def __call__(self, x, y) -> np.ndarray:
        """beta off the cores (the outer trace on core boundaries)."""
        return self.U + self.scale * self.smooth_at(x, y) + self.singular(x, y)

    @property
    def domain(self) -> Domain:
        return self.smooth.domain


def constant_strain(domain: Domain, F, eps: float) -> AdmissibleStrain:
    return AdmissibleStrain(np.asarray(F, float), StrainField(domain, np.zeros(domain.shape + (2, 2))),
                            eps * abs(math.log(eps)), eps)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostics:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _in_lattice(xi, lattice) -> bool:
    coef = np.linalg.solve(lattice.basis, np.asarray(xi, float))
    return bool(np.all(np.abs(coef - np.round(coef)) < 1e-9))


def curl_residual(mu: DislocationMeasure, beta: AdmissibleStrain) -> float:
    """L1 norm of curl beta on grid nodes off the cores, relative to |mu| plus
    the L1 norms of the gradient of the smooth part and of the singular curl.

    Normalizing by the full gradient keeps truncation-level curls of smooth
    gradient fields small when mu is empty.
    """
    d = beta.domain
    X, Y = d.coords()
    valid = beta.smooth.valid
    w = d.node_weights() * valid
    cs = beta.scale * discrete_curl(beta.smooth).values
    cz = np.zeros_like(cs)
    if beta.atoms:
        C = mu.centers if len(mu) else np.array([a.center for a in beta.atoms])
        dist = np.min(np.hypot(X[..., None] - C[:, 0], Y[..., None] - C[:, 1]), axis=-1)
        sel = valid & (dist >= max(beta.eps, 2 * d.h))
        curl, _ = _fd(beta.singular, X[sel], Y[sel], 1e-3 * dist[sel])
        cz[sel] = curl
    num = float(np.sum(w * np.linalg.norm(cs + cz, axis=-1)))
    B = beta.smooth.values
    gB = np.stack([partial(B, valid, 1, d.h), partial(B, valid, 0, d.h)], axis=-1)
    den = (mu.total_variation() + beta.scale * float(np.sum(w * np.sqrt(np.sum(gB ** 2, axis=(-3, -2, -1)))))
           + float(np.sum(w * np.linalg.norm(cz, axis=-1))))
    return num / den if den > 0 else 0.0


def validate_configuration(mu: DislocationMeasure, beta: AdmissibleStrain,
                           sched: ScaleSchedule, lattice: Optional[dl.BurgersLattice] = None,
                           curl_tol: float = CURL_TOL) -> Diagnostics:
    """Run every invariant of the admissible classes; never raises."""
    checks = []
    try:
        j = sched.index(mu.eps)
        checks.append(Check("eps_in_schedule", True, mu.eps, mu.eps))
    except KeyError:
        checks.append(Check("eps_in_schedule", False, mu.eps, float("nan")))
        return Diagnostics(tuple(checks))
    rho = sched.rho[j]
    d = beta.domain
    C = mu.centers
    if len(mu):
        inside = d.contains(C[:, 0], C[:, 1])
        bd = np.where(inside, d.boundary_distance(C[:, 0], C[:, 1]), -np.inf)
        checks.append(Check("cores_in_domain", bool(np.min(bd) >= 2 * rho), float(np.min(bd)), 2 * rho,
                            "B_{2 rho}(x_i) inside the domain"))
    else:
        checks.append(Check("cores_in_domain", True, math.inf, 2 * rho))
    sep = float(np.min(pdist(C))) if len(mu) > 1 else math.inf
    checks.append(Check("separation", sep >= 2 * rho * (1 - 1e-12), sep, 2 * rho, "|x_j - x_k| >= 2 rho"))
    if lattice is not None:
        bad = [i for i, xi in enumerate(mu.burgers) if not _in_lattice(xi, lattice)]
        checks.append(Check("lattice", not bad, float(len(bad)), 0.0))
    for lo, name in ((sched.eta_bounds(j)[0], "eta_lower"), (sched.eta_bounds(j)[1], "eta_upper")):
        ok = sched.eta[j] >= lo * (1 - 1e-12) if name == "eta_lower" else sched.eta[j] <= lo * (1 + 1e-12)
        checks.append(Check(name, ok, sched.eta[j], lo))
    checks.append(Check("scale", math.isclose(beta.eps, mu.eps, rel_tol=1e-12), beta.eps, mu.eps))
    res = curl_residual(mu, beta)
    checks.append(Check("curl", res <= curl_tol, res, curl_tol, "relative L1 curl off the cores"))
    worst = 0.0
    for (p, xi) in mu.atoms:
        target = mu.eps * np.asarray(xi)
        n = 256
        th = 2 * np.pi * np.arange(n) / n
        r = mu.eps * (1 + 1e-9)
        b = beta(p[0] + r * np.cos(th), p[1] + r * np.sin(th))
        t = np.stack([-np.sin(th), np.cos(th)], -1)
        circ = np.einsum("kij,kj->ki", b, t).mean(0) * 2 * np.pi * r
        scale = float(np.linalg.norm(target)) or mu.eps
        worst = max(worst, float(np.linalg.norm(circ - target)) / scale)
    checks.append(Check("circulation", worst <= CIRC_TOL, worst, CIRC_TOL, "relative to eps |xi|"))
    div = discrete_div(beta.smooth).values
    finite = bool(np.all(np.isfinite(div)))
    checks.append(Check("div_square_integrable", finite, 0.0 if finite else math.inf, math.inf))
    return Diagnostics(tuple(checks))


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    """Scaled energy split.  ``total`` is the sum of the parts (None when the
    configuration is infeasible for the limit functional)."""

    elastic: float
    self_energy: float
    interaction: float
    penalty: float
    total: Optional[float]
    eps: Optional[float] = None
    feasible: bool = True
    notes: tuple = ()

    @classmethod
    def build(cls, elastic, self_energy, interaction, penalty, eps=None, feasible=True, notes=()):
        total = math.fsum([elastic, self_energy, interaction, penalty]) if feasible else None
        return cls(float(elastic), float(self_energy), float(interaction), float(penalty),
                   total, eps, feasible, tuple(notes))

    def to_dict(self) -> dict:
        return {"elastic": self.elastic, "self_energy": self.self_energy,
                "interaction": self.interaction, "penalty": self.penalty,
                "total": self.total, "eps": self.eps, "feasible": self.feasible,
                "notes": list(self.notes)}

    def to_json(self) -> str:
        from .rigidity import _round17

        return json.dumps(_round17(self.to_dict()), indent=2, sort_keys=True)


@dataclass(frozen=True)
class Quadrature:
    n_theta: int = 64
    seg: float = 0.25
    order: int = 4


def _polar_points(center, r_in, r_out, quad: Quadrature, log_graded: bool = True):
    """Points and weights on the annulus r_in < |x - c| < r_out."""
    g, gw = np.polynomial.legendre.leggauss(quad.order)
    if log_graded and r_in > 0:
        a, b = math.log(r_in), math.log(r_out)
    else:
        a, b = r_in, r_out
    nseg = max(1, math.ceil((b - a) / quad.seg)) if log_graded and r_in > 0 else 2
    edges = np.linspace(a, b, nseg + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    t = (mid[:, None] + half[:, None] * g[None]).ravel()
    tw = (half[:, None] * gw[None]).ravel()
    if log_graded and r_in > 0:
        r = np.exp(t)
        rw = tw * r * r  # dr r = r^2 ds
    else:
        r = t
        rw = tw * r
    th = 2 * np.pi * np.arange(quad.n_theta) / quad.n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    W = (rw[:, None] * np.full(quad.n_theta, 2 * np.pi / quad.n_theta)[None]).ravel()
    return center[0] + (R * np.cos(TH)).ravel(), center[1] + (R * np.sin(TH)).ravel(), W


def _indicator(subdomain: Optional[Callable], x, y) -> np.ndarray:
    if subdomain is None:
        return np.ones(np.shape(x), bool)
    return np.asarray(subdomain(x, y), bool)


def energy_eps(mu: DislocationMeasure, beta: AdmissibleStrain, sched: ScaleSchedule,
               eps: Optional[float] = None, density: Optional[ElasticDensity] = None,
               subdomain: Optional[Callable] = None, quad: Quadrature = Quadrature(),
               lattice: Optional[dl.BurgersLattice] = None, check: bool = True) -> EnergyReport:
    """(1/(eps |log eps|)^2) [int W(beta) + eta^2 int_{Omega_eps(mu)} |div beta|^2].

    The split is elastic (W of the smooth part alone), self (W of U plus each
    singular atom alone), interaction (the rest of int W) and penalty.
    ``subdomain(x, y) -> bool`` restricts every integral to a measurable set.
    """
    eps = mu.eps if eps is None else eps
    if not math.isclose(eps, mu.eps, rel_tol=1e-12):
        raise InvalidConfiguration("eps does not match the configuration")
    if check:
        diag = validate_configuration(mu, beta, sched, lattice)
        if not diag.passed:
            raise InvalidConfiguration("invalid configuration: " +
                                       ", ".join(c.name for c in diag.failed()))
    j = sched.index(eps)
    eta = sched.eta[j]
    if density is None:
        density = ElasticDensity(WellSet([beta.U]), mode="iso")
    s = beta.scale
    norm = 1.0 / (eps * abs(math.log(eps))) ** 2
    notes = []
    if not density.well_set.identity_is_well():
        notes.append("identity is not a well: W integrated off the cores only")
    d = beta.domain
    X, Y = d.coords()
    B = beta.smooth.values
    w = d.node_weights() * beta.smooth.valid * _indicator(subdomain, X, Y)
    Ws = density(beta.U + s * B)
    divB = discrete_div(beta.smooth)
    dv2 = np.sum(divB.values ** 2, axis=-1)
    elastic = float(np.sum(w * Ws))
    pen = float(np.sum(w * dv2)) * s * s
    self_e = 0.0
    inter = 0.0
    for (p, _), atom in zip(mu.atoms, beta.atoms or (None,) * len(mu)):
        # remove the core disk from the grid integrals
        cx, cy, cw = _polar_points(p, 0.0, eps, quad, log_graded=False)
        m = _indicator(subdomain, cx, cy) & d.contains(cx, cy)
        Bc = beta.smooth_at(cx[m], cy[m])
        elastic -= float(np.sum(cw[m] * density(beta.U + s * Bc)))
        pen -= float(np.sum(cw[m] * np.sum(bilinear(divB, cx[m], cy[m], strict=False) ** 2, -1))) * s * s
        if atom is None:
            continue
        px, py, pw = _polar_points(p, eps, atom.radius, quad)
        m = _indicator(subdomain, px, py) & d.contains(px, py)
        px, py, pw = px[m], py[m], pw[m]
        Bp = beta.smooth_at(px, py)
        Z = atom(px, py)
        full = density(beta.U + s * Bp + Z)
        alone = density(beta.U + Z)
        smooth = density(beta.U + s * Bp)
        self_e += float(np.sum(pw * alone))
        inter += float(np.sum(pw * (full - alone - smooth)))
        dist = np.hypot(px - p[0], py - p[1])
        _, dz = _fd(atom, px, py, 1e-3 * dist)
        dB = s * bilinear(divB, px, py, strict=False)
        pen += float(np.sum(pw * (np.sum((dB + dz) ** 2, -1) - np.sum(dB ** 2, -1))))
    return EnergyReport.build(norm * elastic, norm * self_e, norm * inter, norm * eta * eta * pen,
                              eps=eps, notes=notes)


# ---------------------------------------------------------------------------
# the limit functional
# ---------------------------------------------------------------------------


def curl_constraint_residual(beta: StrainField, mu: VectorMeasureSample, R=None) -> float:
    """Relative H^-1 size of curl beta - R^T mu, measured as the L2 norm of the
    gradient of its Dirichlet Poisson potential."""
    R = np.eye(2) if R is None else np.asarray(R, float)
    d = beta.domain
    c = discrete_curl(beta).values
    m = np.asarray(mu.values, float) @ R  # rows: R^T mu
    w = d.node_weights()

    def h1(f):
        if not np.any(f):
            return 0.0
        u = solve_poisson(PoissonProblem(d, ScalarField(d, f)))
        g = gradient(u).values
        return math.sqrt(float(np.sum(w[..., None, None] * g * g)))

    num = h1(c - m)
    den = max(h1(c), h1(m))
    return num / den if den > 0 else 0.0


def limit_energy(mu_limit: VectorMeasureSample, beta_limit: StrainField, R, U,
                 table: dl.SelfEnergyTable, density: Optional[ElasticDensity] = None,
                 tol: float = 0.05) -> EnergyReport:
    """(1/2) int C_U beta:beta + int phi(RU, dmu/d|mu|) d|mu|; flagged infeasible
    when curl beta differs from R^T mu beyond ``tol``."""
    R = np.asarray(R, float)
    U = np.asarray(U, float)
    if density is None:
        C = identity_form()
    else:
        C = density.hessian(density.well_index(U))
    d = beta_limit.domain
    w = d.node_weights() * beta_limit.valid
    elastic = 0.5 * float(np.sum(w * apply_form(C, beta_limit.values, beta_limit.values)))
    if not np.allclose(table.rotation, R):
        table = dl.SelfEnergyTable(table.well, R, table.Q, table.lattice, table.convention, table.radius)
    mv = np.asarray(mu_limit.values, float).reshape(-1, 2)
    mag = np.linalg.norm(mv, axis=1)
    nz = mag > 0
    self_e = 0.0
    if np.any(nz):
        dirs = np.round(mv[nz] / mag[nz, None], 12)
        uniq, inv = np.unique(dirs, axis=0, return_inverse=True)
        phis = np.array([dl.relax_phi(table, u) for u in uniq])
        self_e = float(np.sum(w.reshape(-1)[nz] * mag[nz] * phis[inv.reshape(-1)]))
    res = curl_constraint_residual(beta_limit, mu_limit, R)
    feasible = res <= tol
    notes = [f"curl constraint residual {res:.3e}"]
    return EnergyReport.build(elastic, self_e, 0.0, 0.0, feasible=feasible, notes=notes)


def region_indicator(domain: Domain, E_vertices, sub: int = 4) -> np.ndarray:
    """Fraction of each node's dual cell lying in the polygon E (sub x sub samples)."""
    X, Y = domain.coords()
    h = domain.h
    off = (np.arange(sub) + 0.5) / sub - 0.5
    V = np.asarray(E_vertices, float)
    acc = np.zeros(domain.shape)
    for a in off:
        for b in off:
            acc += _polygon_contains(V, X + a * h, Y + b * h)
    return acc / sub ** 2


def polygon_area(V) -> float:
    V = np.asarray(V, float)
    x, y = V[:, 0], V[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def limit_strain(domain: Domain, E_vertices, xi, amplitude: float = 0.05):
    """A limit pair (mu, beta) with curl beta = mu = xi chi_E dx.

    beta = grad z J + grad v with Delta z = -xi chi_E (zero Dirichlet data)
    and v a smooth non-harmonic field, so div beta does not vanish.
    """
    xi = np.asarray(xi, float)
    chi = region_indicator(domain, E_vertices)
    mu = VectorMeasureSample(domain, chi[..., None] * xi)
    z = solve_poisson(PoissonProblem(domain, ScalarField(domain, -chi[..., None] * xi)))
    x0, y0, x1, y1 = domain.bbox
    Lx, Ly = x1 - x0, y1 - y0

    def grad_v(x, y):
        a = np.pi * (x - x0) / Lx
        b = np.pi * (y - y0) / Ly
        g = np.zeros(np.shape(x) + (2, 2))
        g[..., 0, 0] = np.pi / Lx * np.cos(a) * np.sin(b)
        g[..., 0, 1] = np.pi / Ly * np.sin(a) * np.cos(b)
        g[..., 1, 0] = 0.5 * 2 * np.pi / Lx * np.cos(2 * a) * np.sin(b)
        g[..., 1, 1] = 0.5 * np.pi / Ly * np.sin(2 * a) * np.cos(b)
        return amplitude * g

    X, Y = domain.coords()
    beta = StrainField(domain, gradient(z).values @ J + grad_v(X, Y))
    return mu, beta


# ---------------------------------------------------------------------------
# recovery sequences
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _kernel_basis_cached(key: bytes):
    C = np.frombuffer(key).reshape(2, 2, 2, 2)
    return dl.kernel_basis(C)


def kernel_basis_for(C: np.ndarray):
    return _kernel_basis_cached(np.ascontiguousarray(C, float).tobytes())


def self_energy_table(density: ElasticDensity, U, lattice: dl.BurgersLattice,
                      convention: str = "psi-half", R=None) -> dl.SelfEnergyTable:
    """Table of hat_psi(R^T xi, U) from the angular kernels of C_U."""
    U = np.asarray(U, float)
    C = density.hessian(density.well_index(U))
    Q = dl.self_energy_matrix(kernel_basis_for(C), convention)
    R = np.eye(2) if R is None else np.asarray(R, float)
    return dl.SelfEnergyTable(U, R, Q, lattice, convention)


@dataclass(frozen=True, eq=False)
class Recovery:
    mu: DislocationMeasure
    beta: AdmissibleStrain
    r: float
    gamma: float
    Lambda: float
    columns: np.ndarray
    weights: np.ndarray
    counts: tuple
    target_count: float

    def info(self) -> dict:
        return {"atoms": len(self.mu), "r_j": self.r, "gamma_j": self.gamma, "Lambda": self.Lambda,
                "columns": self.columns.tolist(), "weights": self.weights.tolist(),
                "counts": list(self.counts), "target_count": self.target_count}


def hex_sites(E_vertices, spacing: float, offset, jitter: float, rng) -> np.ndarray:
    V = np.asarray(E_vertices, float)
    x0, y0 = V.min(0) - spacing
    x1, y1 = V.max(0) + spacing
    dy = spacing * math.sqrt(3) / 2
    rows = int(math.ceil((y1 - y0) / dy)) + 1
    cols = int(math.ceil((x1 - x0) / spacing)) + 2
    jj, ii = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    px = x0 + offset[0] + ii * spacing + 0.5 * spacing * (jj % 2)
    py = y0 + offset[1] + jj * dy
    P = np.stack([px.ravel(), py.ravel()], 1)
    P = P + rng.uniform(-jitter, jitter, P.shape)
    return P[_polygon_contains(V, P[:, 0], P[:, 1])]


def build_recovery(omega: Domain, E_vertices, xi, sched: ScaleSchedule, j: int,
                   density: ElasticDensity, lattice: dl.BurgersLattice,
                   beta_limit: Optional[StrainField] = None, U=None,
                   convention: str = "psi-half", seed: int = 0,
                   tries: int = 256) -> Recovery:
    """Recovery configuration at eps_j for mu = xi chi_E dx (R = I).

    Atoms of species k (Burgers vector xi_k from the phi-optimal
    decomposition) sit on a jittered hexagonal lattice with one site per area
    1/(Lambda |log eps|), so that the dislocation density divided by
    eps |log eps| matches xi chi_E.  The smooth part solves for the curl of
    the cut-off rings, so beta is curl free off the cores.
    """
    U = density.well_set.wells[0] if U is None else np.asarray(U, float)
    xi = np.asarray(xi, float)
    eps = sched.eps[j]
    rho = sched.rho[j]
    L = abs(math.log(eps))
    s = eps * L
    if beta_limit is None:
        _, beta_limit = limit_strain(omega, E_vertices, xi)
    area = polygon_area(E_vertices)
    if not np.any(xi):
        B = beta_limit
        return Recovery(DislocationMeasure((), eps), AdmissibleStrain(U, B, s, eps), math.inf, 0.0,
                        0.0, np.zeros((0, 2)), np.zeros(0), (), 0.0)
    table = self_energy_table(density, U, lattice, convention)
    rel = dl.relax_phi(table, xi, detail=True)
    Lam = rel.Lambda
    r = 1.0 / (2.0 * math.sqrt(Lam * L))
    gam = 1.0 - abs(math.log(rho)) / L - 1.0 / (2.0 * math.sqrt(L))
    if not 0 < gam < 1:
        raise RecoveryInfeasible(f"exponent gamma_j = {gam:.4g} outside (0, 1)", 0)
    counts = [int(round(lam * L * area)) for lam in rel.weights]
    M = sum(counts)
    target = Lam * L * area
    spacing = math.sqrt(2.0 / (math.sqrt(3.0) * Lam * L))
    jitter = 0.45 * (spacing - 2 * r) / math.sqrt(2.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, j]))
    best = None
    cx, cy = np.mean(np.asarray(E_vertices, float), axis=0)
    feasible_max = 0
    for _ in range(tries):
        P = hex_sites(E_vertices, spacing, rng.uniform(0, spacing, 2), jitter, rng)
        feasible_max = max(feasible_max, len(P))
        if len(P) == M:
            best = P
            break
        if len(P) > M and (best is None or len(P) < len(best)):
            best = P
    if best is None:
        raise RecoveryInfeasible(f"E hosts at most {feasible_max} sites, {M} required", feasible_max)
    if len(best) > M:
        order = np.argsort(np.hypot(best[:, 0] - cx, best[:, 1] - cy), kind="stable")
        best = best[np.sort(order[:M])]
    labels = rng.permutation(np.repeat(np.arange(len(counts)), counts))
    basis = kernel_basis_for(density.hessian(density.well_index(U)))
    zetas = [dl.interpolant_zeta(dl.combine_kernels(basis, col)) for col in rel.columns]
    atoms = tuple(SingularAtom(tuple(p), tuple(rel.columns[k]), eps, gam, r, zetas[k])
                  for p, k in zip(best, labels))
    mu = DislocationMeasure(tuple((a.center, a.xi) for a in atoms), eps)
    # curl of the cut-off singular fields on the grid
    X, Y = omega.coords()
    nu = np.zeros(omega.shape + (2,))
    h = omega.h
    for a in atoms:
        dist = np.hypot(X - a.center[0], Y - a.center[1])
        sel = (dist > 0.5 * r - 2 * h) & (dist < r + 2 * h)
        curl, _ = _fd(a, X[sel], Y[sel], 1e-5 * r)
        nu[sel] += curl
    curl_lim = discrete_curl(beta_limit).values
    p = solve_poisson(PoissonProblem(omega, ScalarField(omega, nu / s + curl_lim)))
    B = StrainField(omega, beta_limit.values + gradient(p).values @ J)
    beta = AdmissibleStrain(U, B, s, eps, atoms)
    return Recovery(mu, beta, r, gam, Lam, rel.columns, rel.weights, tuple(counts), target)


# ---------------------------------------------------------------------------
# liminf diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShellRow:
    atom: int
    k: int
    r_in: float
    r_out: float
    energy: float
    psi_ref: float

    @property
    def ratio(self) -> float:
        return self.energy / self.psi_ref if self.psi_ref > 0 else math.nan


def liminf_shell_count(eps: float, rho: float, delta: float = LIMINF_DELTA, s: float = 0.9) -> int:
    """k~ = floor(k_j) + 1 with delta^k_j rho = eps^s."""
    kj = (s * abs(math.log(eps)) - abs(math.log(rho))) / abs(math.log(delta))
    return int(math.floor(kj)) + 1


def gamma_liminf_diagnostic(mu: DislocationMeasure, beta: AdmissibleStrain, sched: ScaleSchedule,
                            j: int, density: Optional[ElasticDensity] = None,
                            delta: float = LIMINF_DELTA, s: float = 0.9,
                            convention: str = "psi-half", quad: Quadrature = Quadrature(),
                            R=None) -> list[ShellRow]:
    """W-energy / eps^2 on dyadic shells around each atom against the cell
    lower bound (convention factor times psi(R^T xi, delta, U)).

    Shells reaching inside the core are skipped.
    """
    eps, rho = sched.eps[j], sched.rho[j]
    if density is None:
        density = ElasticDensity(WellSet([beta.U]), mode="iso")
    R = np.eye(2) if R is None else np.asarray(R, float)
    C = density.hessian(density.well_index(beta.U))
    fac = dl.convention_factor(convention)
    kt = liminf_shell_count(eps, rho, delta, s)
    cache = {}
    rows = []
    for i, (p, xi) in enumerate(mu.atoms):
        key = tuple(np.round(R.T @ np.asarray(xi), 12))
        if key not in cache:
            cache[key] = fac * dl.cell_energy(np.array(key), delta, C)
        for k in range(1, kt + 1):
            r_out = delta ** (k - 1) * rho
            r_in = delta ** k * rho
            if r_in < eps:
                break
            px, py, pw = _polar_points(p, r_in, r_out, quad)
            Wv = density(beta(px, py))
            rows.append(ShellRow(i, k, r_in, r_out, float(np.sum(pw * Wv)) / eps ** 2, cache[key]))
    return rows
