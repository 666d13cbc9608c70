"""Dislocation kernels, cell problems, self-energies and their relaxation.

Cell problems on annuli B_R minus B_delta are solved in log-polar
coordinates s = log r, theta.  Writing a curl-free field with circulation xi as

    beta = (1/r) G,   G = xi (x) theta_hat / (2 pi) + d_s phi (x) r_hat + d_theta phi (x) theta_hat,

with phi single valued, the energy int C beta:beta dx equals
int C G:G ds dtheta.  The problem is therefore scale free and a uniform grid
in (s, theta) has local spacing proportional to r.  phi is discretized by
bilinear elements, periodic in theta, and the quadratic problem is solved by a
sparse direct factorization.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .wells import J, apply_form, identity_form

TWO_PI = 2.0 * math.pi
CONVENTIONS = ("psi-half", "psi-nohalf")


def _as_vec(xi) -> np.ndarray:
    v = np.asarray(xi, dtype=float).reshape(2)
    return v


# ---------------------------------------------------------------------------
# divergence-free kernel
# ---------------------------------------------------------------------------


def divergence_free_kernel(xi) -> Callable:
    """x -> xi (x) J x / (2 pi |x|^2), curl xi delta_0 and divergence free."""
    xi = _as_vec(xi)

    def beta0(x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        r2 = x * x + y * y
        if np.any(r2 == 0):
            raise ValueError("the dislocation kernel is singular at the origin")
        jx = np.stack([-y, x], axis=-1) / (TWO_PI * r2[..., None])
        return np.einsum("i,...j->...ij", xi, jx)

    return beta0


def kernel_energy_closed_form(xi, delta: float, outer: float = 1.0) -> float:
    """int_{B_outer minus B_delta} |beta_0|^2 = |xi|^2 log(outer/delta) / (2 pi)."""
    xi = _as_vec(xi)
    return float(xi @ xi) * math.log(outer / delta) / TWO_PI


# ---------------------------------------------------------------------------
# log-polar finite elements
# ---------------------------------------------------------------------------

_GP = np.array([-1.0, 1.0]) / math.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class LogPolarGrid:
    s0: float
    s1: float
    n_s: int
    n_theta: int

    @classmethod
    def for_annulus(cls, r_in: float, r_out: float, ds: float = 1 / 16, n_theta: int = 128):
        s0, s1 = math.log(r_in), math.log(r_out)
        n_s = max(2, math.ceil((s1 - s0) / ds - 1e-9))
        return cls(s0, s1, n_s, n_theta)

    @property
    def ds(self) -> float:
        return (self.s1 - self.s0) / self.n_s

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def n_nodes(self) -> int:
        return (self.n_s + 1) * self.n_theta

    def node(self, i, k):
        return i * self.n_theta + (k % self.n_theta)


def _theta_frames(theta):
    rh = np.stack([np.cos(theta), np.sin(theta)], -1)
    th = np.stack([-np.sin(theta), np.cos(theta)], -1)
    return rh, th


def _element_blocks(grid: LogPolarGrid, C: np.ndarray, xi: np.ndarray):
    """Per-theta-column element stiffness (8x8), load (8) and constant energy.

    Local dofs are ordered (node a, component c) with nodes
    (i,k), (i+1,k), (i,k+1), (i+1,k+1).  Everything is independent of the
    radial index because the log-polar energy is scale free.
    """
    ds, dth = grid.ds, grid.dtheta
    nk = grid.n_theta
    Ke = np.zeros((nk, 8, 8))
    fe = np.zeros((nk, 8))
    e0 = np.zeros(nk)
    C4 = C.reshape(4, 4)
    for gs, gt in itertools.product(_GP, _GP):
        a = 0.5 * (1 + gs)  # local s coordinate in [0,1]
        b = 0.5 * (1 + gt)
        theta = (np.arange(nk) + b) * dth
        rh, th = _theta_frames(theta)
        # shape function derivatives for nodes (0,0),(1,0),(0,1),(1,1)
        dNs = np.array([-(1 - b), (1 - b), -b, b]) / ds
        dNt = np.array([-(1 - a), -a, (1 - a), a]) / dth
        g = dNs[None, :, None] * rh[:, None, :] + dNt[None, :, None] * th[:, None, :]  # (nk,4,2)
        B = np.zeros((nk, 4, 8))  # G flattened (c,j) <- dof (a,c)
        for node in range(4):
            for c in range(2):
                B[:, 2 * c + 0, 2 * node + c] = g[:, node, 0]
                B[:, 2 * c + 1, 2 * node + c] = g[:, node, 1]
        G0 = np.einsum("i,kj->kij", xi, th).reshape(nk, 4) / TWO_PI
        w = 0.25 * ds * dth
        Ke += w * np.einsum("kpa,pq,kqb->kab", B, C4, B)
        fe += w * np.einsum("kpa,pq,kq->ka", B, C4, G0)
        e0 += w * np.einsum("kp,pq,kq->k", G0, C4, G0)
    return Ke, fe, e0


@dataclass(frozen=True, eq=False)
class CellSolution:
    grid: LogPolarGrid
    xi: np.ndarray
    phi: np.ndarray  # (n_s+1, n_theta, 2)
    energy: float

    def nodal_G(self) -> np.ndarray:
        """G at element centres, shape (n_s, n_theta, 2, 2)."""
        g = self.grid
        p = self.phi
        pn = np.roll(p, -1, axis=1)
        ps = 0.5 * ((p[1:] - p[:-1]) + (pn[1:] - pn[:-1])) / g.ds
        pt = 0.5 * ((pn[:-1] - p[:-1]) + (pn[1:] - p[1:])) / g.dtheta
        theta = (np.arange(g.n_theta) + 0.5) * g.dtheta
        rh, th = _theta_frames(theta)
        G0 = np.einsum("i,kj->kij", self.xi, th) / TWO_PI
        return (G0[None] + np.einsum("ski,kj->skij", ps, rh)
                + np.einsum("ski,kj->skij", pt, th))


class SolverFailure(RuntimeError):
    pass


def solve_cell(xi, r_in: float, r_out: float, C: Optional[np.ndarray] = None,
               ds: float = 1 / 16, n_theta: int = 128) -> CellSolution:
    """Minimize int_{B_r_out minus B_r_in} C beta:beta over curl-free beta with
    circulation xi (free boundary)."""
    xi = _as_vec(xi)
    if C is None:
        C = identity_form()
    if not 0 < r_in < r_out:
        raise ValueError("need 0 < r_in < r_out")
    grid = LogPolarGrid.for_annulus(r_in, r_out, ds, n_theta)
    if not (grid.ds <= 1 / 16 + 1e-12 and grid.dtheta <= 1 / 16 + 1e-12):
        raise ValueError("under-resolved grid: local spacing must be <= r/16")
    if not np.any(xi):
        return CellSolution(grid, xi, np.zeros((grid.n_s + 1, grid.n_theta, 2)), 0.0)
    Ke, fe, e0 = _element_blocks(grid, C, xi)
    ns, nk = grid.n_s, grid.n_theta
    i = np.arange(ns)[:, None]
    k = np.arange(nk)[None, :]
    nodes = np.stack([
        i * nk + k, (i + 1) * nk + k,
        i * nk + (k + 1) % nk, (i + 1) * nk + (k + 1) % nk,
    ], axis=-1)  # (ns, nk, 4)
    dofs = np.stack([2 * nodes, 2 * nodes + 1], axis=-1).reshape(ns, nk, 8)
    rows = np.broadcast_to(dofs[..., :, None], (ns, nk, 8, 8)).ravel()
    cols = np.broadcast_to(dofs[..., None, :], (ns, nk, 8, 8)).ravel()
    vals = np.broadcast_to(Ke[None], (ns, nk, 8, 8)).ravel()
    ndof = 2 * grid.n_nodes
    K = sp.csc_matrix((vals, (rows, cols)), shape=(ndof, ndof))
    f = np.zeros(ndof)
    np.add.at(f, dofs.ravel(), np.broadcast_to(fe[None], (ns, nk, 8)).ravel())
    E0 = ns * float(e0.sum())
    # translations are exact null modes: pin the first node
    free = np.arange(2, ndof)
    Kf = K[free][:, free]
    Kf = 0.5 * (Kf + Kf.T)
    try:
        lu = spla.splu(Kf.tocsc())
        x = lu.solve(-f[free])
    except RuntimeError as exc:  # singular factorization
        raise SolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SolverFailure("non-finite cell solution")
    res = np.linalg.norm(Kf @ x + f[free])
    if res > 1e-8 * max(np.linalg.norm(f), 1e-300):
        raise SolverFailure(f"cell solve residual {res:.3e}")
    phi = np.zeros(ndof)
    phi[free] = x
    energy = E0 + float(f @ phi)
    return CellSolution(grid, xi, phi.reshape(grid.n_s + 1, nk, 2), max(energy, 0.0))


def cell_energy(xi, delta: float, C: Optional[np.ndarray] = None,
                ds: float = 1 / 16, n_theta: int = 128) -> float:
    """psi(xi, delta) = min int_{B_1 minus B_delta} C beta:beta (no factor 1/2)."""
    if not 0 < delta <= 0.25:
        raise ValueError("delta must lie in (0, 1/4]")
    return solve_cell(xi, delta, 1.0, C, ds, n_theta).energy


def cell_energy_eps(xi, eps: float, rho_eps: float, C: Optional[np.ndarray] = None,
                    ds: float = 1 / 16, n_theta: int = 128) -> float:
    """psi_eps = (1/|log eps|) min int_{B_rho minus B_eps} C beta:beta."""
    if not eps < rho_eps / 4:
        raise ValueError("need eps < rho_eps / 4")
    e = solve_cell(xi, eps, rho_eps, C, ds, n_theta).energy
    return e / abs(math.log(eps))


def convention_factor(convention: str) -> float:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    return 0.5 if convention == "psi-half" else 1.0


@dataclass(frozen=True)
class HatPsiFit:
    value: float
    slope_b: float
    residual: float
    deltas: tuple
    ratios: tuple


HAT_PSI_DELTAS = (1e-1, 3e-2, 1e-2, 3e-3)


def hat_psi(xi, C: Optional[np.ndarray] = None, convention: str = "psi-half",
            deltas: Sequence[float] = HAT_PSI_DELTAS, ds: float = 1 / 16,
            n_theta: int = 128) -> HatPsiFit:
    """Extrapolate psi(xi, delta)/|log delta| -> a by least squares on a + b/|log delta|."""
    fac = convention_factor(convention)
    L = np.array([abs(math.log(d)) for d in deltas])
    ratios = np.array([cell_energy(xi, d, C, ds, n_theta) for d in deltas]) / L
    if not np.any(ratios):
        return HatPsiFit(0.0, 0.0, 0.0, tuple(deltas), tuple(ratios))
    A = np.stack([np.ones_like(L), 1.0 / L], 1)
    coef, *_ = np.linalg.lstsq(A, ratios, rcond=None)
    resid = float(np.max(np.abs(A @ coef - ratios)) / max(abs(coef[0]), 1e-300))
    # psi(delta) is monotone in delta; its normalization should behave smoothly
    d = np.diff(ratios)
    if not (np.all(d >= -1e-9 * abs(coef[0])) or np.all(d <= 1e-9 * abs(coef[0]))):
        raise SolverFailure("non-monotone psi/|log delta| sequence")
    return HatPsiFit(fac * float(coef[0]), fac * float(coef[1]), resid,
                     tuple(deltas), tuple(float(r) for r in ratios))


# ---------------------------------------------------------------------------
# angular kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AngularKernel:
    """beta_R2(xi)(r, theta) = Gamma(theta)/r with
    Gamma = xi (x) theta_hat/(2 pi) + c (x) r_hat + g'(theta) (x) theta_hat.

    ``c`` is the logarithmic displacement coefficient and ``g`` a periodic
    function stored by its real Fourier coefficients (``gc``: cos, ``gs``: sin
    for modes 1..m), one set per component.
    """

    C: np.ndarray
    xi: np.ndarray
    c: np.ndarray
    gc: np.ndarray  # (2, m)
    gs: np.ndarray  # (2, m)
    spread: float
    theta: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)

    def _modes(self):
        return np.arange(1, self.gc.shape[1] + 1)

    def g(self, theta):
        th = np.asarray(theta, float)[..., None]
        m = self._modes()
        return (np.cos(m * th)[..., None, :] * self.gc).sum(-1) + \
               (np.sin(m * th)[..., None, :] * self.gs).sum(-1)

    def dg(self, theta):
        th = np.asarray(theta, float)[..., None]
        m = self._modes()
        return (-m * np.sin(m * th))[..., None, :].__mul__(self.gc).sum(-1) + \
               (m * np.cos(m * th))[..., None, :].__mul__(self.gs).sum(-1)

    def Gamma(self, theta):
        theta = np.asarray(theta, float)
        rh, th = _theta_frames(theta)
        return (np.einsum("i,...j->...ij", self.xi, th) / TWO_PI
                + np.einsum("i,...j->...ij", self.c, rh)
                + np.einsum("...i,...j->...ij", self.dg(theta), th))

    def field(self) -> Callable:
        def beta(x, y):
            x = np.asarray(x, float)
            y = np.asarray(y, float)
            r = np.hypot(x, y)
            if np.any(r == 0):
                raise ValueError("the kernel is singular at the origin")
            return self.Gamma(np.arctan2(y, x)) / r[..., None, None]
        return beta

    def potential(self, x, y):
        """c log r + g(theta), so that beta_0 - beta_R2 = -grad of it."""
        r = np.hypot(x, y)
        return np.log(r)[..., None] * self.c + self.g(np.arctan2(y, x))

    def slope(self, n: int = 4096) -> float:
        """int_0^{2 pi} C Gamma:Gamma dtheta, the |log delta| slope of the energy."""
        th = (np.arange(n) + 0.5) * TWO_PI / n
        G = self.Gamma(th)
        return float(np.mean(apply_form(self.C, G, G)) * TWO_PI)

    def hat_psi(self, convention: str = "psi-half") -> float:
        return convention_factor(convention) * self.slope()

    def bounds(self, n: int = 4096) -> tuple[float, float]:
        """max |Gamma|/|xi| and max |dGamma/dtheta|/|xi|."""
        nx = float(np.linalg.norm(self.xi)) or 1.0
        th = np.arange(n) * TWO_PI / n
        G = self.Gamma(th)
        dG = (self.Gamma(th + 1e-5) - self.Gamma(th - 1e-5)) / 2e-5
        return (float(np.max(np.linalg.norm(G, axis=(-2, -1)))) / nx,
                float(np.max(np.linalg.norm(dG, axis=(-2, -1)))) / nx)

    def scaled(self, t: float) -> "AngularKernel":
        return AngularKernel(self.C, t * self.xi, t * self.c, t * self.gc, t * self.gs,
                             self.spread, self.theta, t * self.samples)


def solve_angular_kernel(C: Optional[np.ndarray], xi, delta0: float = 1e-3,
                         n_theta: int = 128, ds: float = 1 / 16,
                         window: float = 1.0, spread_tol: float = 0.05) -> AngularKernel:
    """Kernel of the whole-plane problem, extracted from the annulus B_1 minus
    B_delta0 by radial averaging of r beta over a window around the geometric
    mid radius."""
    xi = _as_vec(xi)
    if C is None:
        C = identity_form()
    sol = solve_cell(xi, delta0, 1.0, C, ds, n_theta)
    g = sol.grid
    s_nodes = g.s0 + g.ds * np.arange(g.n_s + 1)
    s_mid = 0.5 * (g.s0 + g.s1)
    sel = np.abs(s_nodes - s_mid) <= window + 1e-12
    phi = sol.phi[sel]
    s_sel = s_nodes[sel]
    # phi = c s + g(theta): c from the radial slope, g from the remainder
    dphi = np.diff(phi, axis=0) / g.ds
    c = dphi.mean(axis=(0, 1))
    rest = (phi - s_sel[:, None, None] * c).mean(axis=0)  # (n_theta, 2)
    rest = rest - rest.mean(axis=0)
    theta_nodes = np.arange(g.n_theta) * g.dtheta
    coef = np.fft.rfft(rest, axis=0) / g.n_theta
    m = g.n_theta // 2 - 1
    gc = 2 * coef[1:m + 1].real.T
    gs = -2 * coef[1:m + 1].imag.T
    Gc = sol.nodal_G()
    if np.any(xi):
        s_c = g.s0 + g.ds * (np.arange(g.n_s) + 0.5)
        win = np.abs(s_c - s_mid) <= window
        parts = np.array_split(np.nonzero(win)[0], 4)
        means = np.array([Gc[p].mean(axis=0) for p in parts])
        ref = np.sqrt(np.mean(np.sum(means.mean(0) ** 2, axis=(-2, -1))))
        spread = float(np.max(np.sqrt(np.mean(np.sum((means - means.mean(0)) ** 2,
                                                     axis=(-2, -1)), axis=-1))) / ref)
        samples = Gc[win].mean(axis=0)
    else:
        spread = 0.0
        samples = np.zeros((g.n_theta, 2, 2))
    if spread > spread_tol:
        raise SolverFailure(f"kernel varies by {spread:.2%} across radii (under-resolved)")
    theta_c = (np.arange(g.n_theta) + 0.5) * g.dtheta
    return AngularKernel(C, xi, c, gc, gs, spread, theta_c, samples)


def kernel_basis(C: Optional[np.ndarray], **kw) -> tuple[AngularKernel, AngularKernel]:
    """Kernels for e1 and e2; any other kernel follows by linearity."""
    return solve_angular_kernel(C, [1.0, 0.0], **kw), solve_angular_kernel(C, [0.0, 1.0], **kw)


def combine_kernels(basis: tuple, xi) -> AngularKernel:
    k1, k2 = basis
    a, b = _as_vec(xi)
    return AngularKernel(k1.C, a * k1.xi + b * k2.xi, a * k1.c + b * k2.c,
                         a * k1.gc + b * k2.gc, a * k1.gs + b * k2.gs,
                         max(k1.spread, k2.spread), k1.theta, a * k1.samples + b * k2.samples)


def self_energy_matrix(basis: tuple, convention: str = "psi-half", n: int = 4096) -> np.ndarray:
    """Q with hat_psi(xi) = xi^T Q xi, from the two basis kernels."""
    th = (np.arange(n) + 0.5) * TWO_PI / n
    G = [k.Gamma(th) for k in basis]
    C = basis[0].C
    Q = np.array([[np.mean(apply_form(C, G[a], G[b])) * TWO_PI for b in range(2)]
                  for a in range(2)])
    return convention_factor(convention) * 0.5 * (Q + Q.T)


# ---------------------------------------------------------------------------
# interpolant zeta_xi
# ---------------------------------------------------------------------------


def quintic_ramp(r):
    """C^2 cutoff: 1 on [0, 1/2], 0 on [1, inf), quintic in between."""
    t = np.clip((np.asarray(r, float) - 0.5) / 0.5, 0.0, 1.0)
    return 1.0 - t ** 3 * (10 - 15 * t + 6 * t * t)


def quintic_ramp_prime(r):
    t = np.clip((np.asarray(r, float) - 0.5) / 0.5, 0.0, 1.0)
    return -2.0 * 30.0 * t * t * (1 - t) ** 2


X0 = (0.75, 0.0)


def interpolant_zeta(kernel: AngularKernel) -> Callable:
    """zeta_xi = beta_R2 + grad(f u), with u the potential of beta_0 - beta_R2
    on B_1 minus B_1/2 normalized by u(3/4, 0) = 0."""
    k = kernel
    beta_r2 = k.field()
    base = k.potential(np.array(X0[0]), np.array(X0[1]))

    def zeta(x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        r = np.hypot(x, y)
        if np.any(r == 0):
            raise ValueError("zeta is singular at the origin")
        out = np.array(beta_r2(x, y))
        ring = r < 1.0
        if np.any(ring):
            xr, yr, rr = x[ring], y[ring], r[ring]
            th = np.arctan2(yr, xr)
            rh, tt = _theta_frames(th)
            u = -(k.potential(xr, yr) - base)
            grad_u = -(np.einsum("i,...j->...ij", k.c, rh) + np.einsum("...i,...j->...ij", k.dg(th), tt)) / rr[..., None, None]
            f = quintic_ramp(rr)
            fp = quintic_ramp_prime(rr)
            out[ring] += f[..., None, None] * grad_u + np.einsum("...i,...j->...ij", u, fp[..., None] * rh)
        return out

    return zeta


def closure_derivatives(fn: Callable, x, y, step: float = 1e-5):
    """Fourth-order central differences of a matrix closure: (d/dx, d/dy)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    c = (1 / 12, -2 / 3, 2 / 3, -1 / 12)
    offs = (-2, -1, 1, 2)
    dx = sum(w * fn(x + o * step, y) for w, o in zip(c, offs)) / step
    dy = sum(w * fn(x, y + o * step) for w, o in zip(c, offs)) / step
    return dx, dy


def closure_curl_div(fn: Callable, x, y, step: float = 1e-5):
    """Row curl and row divergence of a matrix closure at points."""
    dx, dy = closure_derivatives(fn, x, y, step)
    curl = dx[..., :, 1] - dy[..., :, 0]
    div = dx[..., :, 0] + dy[..., :, 1]
    return curl, div


def div_C_residual(kernel: AngularKernel, radii=(0.3, 1.0, 3.0), n: int = 64,
                   step: float = 1e-5) -> float:
    """max |div(C beta_R2)| r^2 / |xi| over sample circles (zero for an exact kernel)."""
    beta = kernel.field()
    C = kernel.C

    def stress(x, y):
        return np.einsum("ijkl,...kl->...ij", C, beta(x, y))

    out = 0.0
    th = np.arange(n) * TWO_PI / n
    for r in radii:
        x, y = r * np.cos(th), r * np.sin(th)
        _, div = closure_curl_div(stress, x, y, step * r)
        out = max(out, float(np.max(np.linalg.norm(div, axis=-1))) * r * r)
    return out / (float(np.linalg.norm(kernel.xi)) or 1.0)


# ---------------------------------------------------------------------------
# Burgers lattice, self-energy table and relaxation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BurgersLattice:
    b1: tuple
    b2: tuple
    truncation: Optional[float] = None

    def __post_init__(self):
        if abs(np.linalg.det(self.basis)) <= 1e-12:
            raise ValueError("lattice basis is degenerate")

    @property
    def basis(self) -> np.ndarray:
        return np.array([self.b1, self.b2], float).T

    @property
    def default_truncation(self) -> float:
        return 4.0 * max(np.linalg.norm(self.b1), np.linalg.norm(self.b2))

    def enumerate(self, radius: Optional[float] = None) -> np.ndarray:
        """All nonzero lattice vectors with norm <= radius, symmetric under negation."""
        R = radius if radius is not None else (self.truncation or self.default_truncation)
        B = self.basis
        # bound on coefficients from the smallest singular value
        smin = np.linalg.svd(B, compute_uv=False).min()
        n = int(math.ceil(R / smin)) + 1
        m = np.arange(-n, n + 1)
        M = np.array(np.meshgrid(m, m, indexing="ij")).reshape(2, -1).T
        V = M @ B.T
        norms = np.linalg.norm(V, axis=1)
        keep = (norms <= R * (1 + 1e-12)) & (norms > 0)
        V, M = V[keep], M[keep]
        order = np.lexsort((V[:, 1], V[:, 0], np.round(norms[keep], 12)))
        return V[order]


@dataclass(frozen=True, eq=False)
class SelfEnergyTable:
    """hat_psi(R^T xi, U) = (R^T xi)^T Q (R^T xi) over a truncated lattice."""

    well: np.ndarray
    rotation: np.ndarray
    Q: np.ndarray
    lattice: BurgersLattice
    convention: str = "psi-half"
    radius: Optional[float] = None

    def hat_psi(self, xi) -> float:
        v = self.rotation.T @ _as_vec(xi)
        return float(v @ self.Q @ v)

    def vectors(self, radius: Optional[float] = None) -> np.ndarray:
        return self.lattice.enumerate(radius if radius is not None else self.radius)

    def entries(self, radius: Optional[float] = None) -> list:
        return [(v, self.hat_psi(v)) for v in self.vectors(radius)]

    def to_json(self) -> str:
        from .rigidity import _round17

        d = {
            "well": self.well.tolist(),
            "rotation": self.rotation.tolist(),
            "entries": [{"xi": v.tolist(), "psi_hat": p} for v, p in self.entries()],
            "convention_flag": self.convention,
        }
        return json.dumps(_round17(d), indent=2, sort_keys=True)


@dataclass(frozen=True)
class Relaxation:
    value: float
    columns: np.ndarray
    weights: np.ndarray

    @property
    def Lambda(self) -> float:
        return float(np.sum(self.weights))


class InfeasibleRelaxation(RuntimeError):
    pass


def relax_phi(table: SelfEnergyTable, xi, radius: Optional[float] = None,
              detail: bool = False):
    """phi(RU, xi) = min sum lambda_k hat_psi(R^T xi_k) subject to
    sum lambda_k xi_k = xi, lambda >= 0, over enumerated lattice vectors.

    The LP optimum is polished by re-solving the equality constraints on its
    support, which makes the value exactly positively homogeneous.
    """
    xi = _as_vec(xi)
    V = table.vectors(radius)
    costs = np.array([table.hat_psi(v) for v in V])
    # solve for a unit direction and rescale, so phi(t xi) = t phi(xi) exactly
    scale = math.hypot(*xi)  # no underflow for tiny xi
    if scale == 0.0:
        rel = Relaxation(0.0, np.zeros((0, 2)), np.zeros(0))
        return rel if detail else 0.0
    d = xi / scale
    res = linprog(costs, A_eq=V.T, b_eq=d, bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleRelaxation(res.message)
    lam = res.x
    support = np.nonzero(lam > 1e-9 * max(lam.max(), 1.0))[0]
    cols, w = V[support], lam[support]
    if len(support) <= 2:
        A = cols.T
        sol, *_ = np.linalg.lstsq(A, d, rcond=None)
        if np.all(sol >= 0) and np.allclose(A @ sol, d, atol=1e-12):
            w = sol
    value = float(np.dot(w, costs[support]))
    rel = Relaxation(scale * value, cols, scale * w)
    return rel if detail else rel.value


def brute_force_phi(table: SelfEnergyTable, xi, radius: Optional[float] = None,
                    max_columns: int = 3) -> float:
    """Minimum over all decompositions with at most ``max_columns`` columns.

    With two equality constraints the optimum of any 3-column sub-problem is
    attained on at most two columns, so pairs and singles are enumerated
    exactly.
    """
    xi = _as_vec(xi)
    V = table.vectors(radius)
    c = np.array([table.hat_psi(v) for v in V])
    best = math.inf
    for k, v in enumerate(V):
        cross = v[0] * xi[1] - v[1] * xi[0]
        t = float(v @ xi) / float(v @ v)
        if abs(cross) < 1e-12 and t >= 0:
            best = min(best, t * c[k])
    if max_columns >= 2:
        for a in range(len(V)):
            for b in range(a + 1, len(V)):
                A = np.stack([V[a], V[b]], 1)
                det = np.linalg.det(A)
                if abs(det) < 1e-12:
                    continue
                lam = np.linalg.solve(A, xi)
                if np.all(lam >= -1e-14):
                    best = min(best, float(lam @ c[[a, b]]))
    return best
