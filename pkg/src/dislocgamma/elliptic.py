"""Poisson solvers and the decomposition beta = Y + grad v + grad w.

The Laplacian is the 5-point stencil on the node grid.  With Dirichlet data
the unknowns are the interior nodes (all four neighbours in the domain) and
the remaining domain nodes carry the boundary value zero.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import (
    Domain,
    GridField,
    ScalarField,
    StrainField,
    VectorMeasureSample,
    deep_interior,
    discrete_curl,
    discrete_div,
    gradient,
    shrink,
)
from .wells import J

DIRECT_LIMIT = 100_000
RTOL = 1e-10


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to converge."""


class IncompatibleData(ValueError):
    """Raised for Neumann data violating the compatibility condition."""


@dataclass(frozen=True, eq=False)
class PoissonProblem:
    """Delta u = rhs on ``domain``.

    Parameters
    ----------
    domain : Domain
    rhs : GridField
        Density per node (scalar or vector components).  A
        :class:`VectorMeasureSample` may also carry atoms, which are split
        onto the four surrounding nodes with bilinear weights.
    bc : {"dirichlet", "neumann"}
        Homogeneous Dirichlet, or Neumann with outward flux ``flux(x, y)``
        (rectangles only; zero flux when ``flux`` is None).
    """

    domain: Domain
    rhs: GridField
    bc: str = "dirichlet"
    flux: Optional[Callable] = None

    def __post_init__(self):
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.bc == "neumann" and self.domain.kind != "rectangle":
            raise ValueError("Neumann problems are supported on rectangles only")

    def density(self) -> np.ndarray:
        """Node density with atoms spread bilinearly."""
        f = np.array(self.rhs.values, dtype=float)
        atoms = getattr(self.rhs, "atoms", ())
        if atoms:
            d = self.domain
            x0, y0, _, _ = d.bbox
            inner = shrink(d.node_mask())
            for (px, py), w in atoms:
                fx, fy = (px - x0) / d.h, (py - y0) / d.h
                i, j = int(np.floor(fx)), int(np.floor(fy))
                tx, ty = fx - i, fy - j
                for di, dj, c in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                                  (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
                    if c == 0.0:
                        continue
                    if self.bc == "dirichlet" and not inner[j + dj, i + di]:
                        raise ValueError("atoms must lie strictly inside the domain")
                    f[j + dj, i + di] += c * np.asarray(w) / d.h ** 2
        return f


def _dirichlet_operator(domain: Domain):
    return _dirichlet_cached(domain)


@functools.lru_cache(maxsize=16)
def _dirichlet_cached(domain: Domain):
    inner = shrink(domain.node_mask())
    idx = -np.ones(domain.shape, dtype=np.int64)
    n = int(inner.sum())
    idx[inner] = np.arange(n)
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.full(n, -4.0)]
    jj, ii = np.nonzero(inner)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb = idx[jj + dj, ii + di]
        ok = nb >= 0
        rows.append(idx[jj, ii][ok])
        cols.append(nb[ok])
        vals.append(np.ones(ok.sum()))
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)) / domain.h ** 2
    solver = spla.splu(A) if n < DIRECT_LIMIT else None
    return inner, A, solver


@functools.lru_cache(maxsize=8)
def _neumann_cached(domain: Domain):
    ny, nx = domain.shape
    n = nx * ny
    idx = np.arange(n).reshape(ny, nx)
    # ghost reflection: missing neighbour mirrored across the boundary
    rows, cols, vals = [], [], []
    for j in range(ny):
        for i in range(nx):
            k = idx[j, i]
            rows.append(k)
            cols.append(k)
            vals.append(-4.0)
            for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                jj, ii = j + dj, i + di
                if not (0 <= jj < ny and 0 <= ii < nx):
                    jj, ii = j - dj, i - di
                rows.append(k)
                cols.append(idx[jj, ii])
                vals.append(1.0)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) / domain.h ** 2
    # symmetrize with trapezoid weights and border with the mean constraint
    w = (domain.node_weights() / domain.h ** 2).ravel()
    Aw = sp.diags(w) @ A
    ones = sp.csr_matrix(w.reshape(-1, 1))
    K = sp.bmat([[Aw, ones], [ones.T, None]], format="csc")
    return w, K, spla.splu(K)


def _boundary_flux_vector(domain: Domain, flux: Callable) -> np.ndarray:
    """Ghost-node contribution 2 g / h on boundary nodes (corners get both)."""
    X, Y = domain.coords()
    ny, nx = domain.shape
    h = domain.h
    b = np.zeros(domain.shape)
    g = np.asarray(flux(X, Y), dtype=float) * np.ones(domain.shape)
    b[:, 0] += 2 * g[:, 0] / h
    b[:, -1] += 2 * g[:, -1] / h
    b[0, :] += 2 * g[0, :] / h
    b[-1, :] += 2 * g[-1, :] / h
    return b


def _solve_components(solve_one, f: np.ndarray) -> np.ndarray:
    if f.ndim == 2:
        return solve_one(f)
    out = np.zeros_like(f)
    flat_in = f.reshape(f.shape[:2] + (-1,))
    flat_out = out.reshape(f.shape[:2] + (-1,))
    for c in range(flat_in.shape[2]):
        flat_out[..., c] = solve_one(flat_in[..., c])
    return out


def solve_poisson(problem: PoissonProblem) -> ScalarField:
    """Solve the discrete Poisson problem; returns a scalar or vector potential."""
    domain = problem.domain
    f = problem.density()

    if problem.bc == "dirichlet":
        inner, A, solver = _dirichlet_operator(domain)

        def solve_one(g):
            b = g[inner]
            if solver is not None:
                x = solver.solve(b)
            else:
                d = A.diagonal()
                M = sp.diags(1.0 / d)
                x, info = spla.cg(A, b, rtol=RTOL, maxiter=20 * A.shape[0], M=M)
                if info != 0:
                    raise SolverError(f"CG did not converge (info={info})")
            res = np.linalg.norm(A @ x - b)
            if res > 1e-8 * max(np.linalg.norm(b), 1e-300) and np.linalg.norm(b) > 0:
                raise SolverError(f"relative residual {res / np.linalg.norm(b):.3e} too large")
            u = np.zeros(domain.shape)
            u[inner] = x
            return u

        return ScalarField(domain, _solve_components(solve_one, f))

    w, K, solver = _neumann_cached(domain)
    flux_b = None if problem.flux is None else _boundary_flux_vector(domain, problem.flux)

    def solve_one(g):
        rhs = g.copy()
        if flux_b is not None:
            rhs = rhs - flux_b
        r = w * rhs.ravel()
        tot = float(np.sum(r))
        scale = float(np.sum(np.abs(r))) or 1.0
        if abs(tot) > 1e-8 * scale:
            raise IncompatibleData(f"Neumann data incompatible: mismatch {tot:.3e}")
        sol = solver.solve(np.append(r, 0.0))
        return sol[:-1].reshape(domain.shape)

    comp_shape = f.shape[2:]
    if problem.flux is not None and comp_shape:
        raise ValueError("flux data is supported for scalar problems only")
    return ScalarField(domain, _solve_components(solve_one, f))


def laplacian_5pt(values: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian at nodes with all neighbours present (zeros elsewhere)."""
    out = np.zeros_like(values, dtype=float)
    out[1:-1, 1:-1] = (values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:]
                       + values[1:-1, :-2] - 4 * values[1:-1, 1:-1]) / h ** 2
    return out


def laplacian_residual(fld: GridField) -> float:
    """max |5-point Laplacian| over nodes at distance >= 2h from the boundary
    or any excised core, maximized over components."""
    m = deep_interior(fld.valid, 2)
    if not m.any():
        return 0.0
    lap = laplacian_5pt(fld.values, fld.domain.h)
    return float(np.max(np.abs(lap[m])))


@dataclass(frozen=True, eq=False)
class HelmholtzSplit:
    Y: StrainField
    grad_v: StrainField
    grad_w: StrainField
    z: ScalarField
    v: ScalarField

    def __iter__(self):
        return iter((self.Y, self.grad_v, self.grad_w))


def helmholtz_split(beta: StrainField) -> HelmholtzSplit:
    """beta = Y + grad v + grad w.

    Y = grad z J with Delta z = -curl beta, v from Delta v = div(beta - Y), both
    with zero Dirichlet data; grad w is the remainder and is discretely
    harmonic up to truncation error.
    """
    if beta.cores:
        raise ValueError("helmholtz_split expects a field without excised cores")
    domain = beta.domain
    if domain.kind == "cut_annulus" or (domain.kind == "annulus" and domain.params[2] > 0):
        raise ValueError("helmholtz_split requires a simply connected domain")
    curl = discrete_curl(beta).values
    z = solve_poisson(PoissonProblem(domain, ScalarField(domain, -curl)))
    Y = StrainField(domain, gradient(z).values @ J)
    div = discrete_div(StrainField(domain, beta.values - Y.values)).values
    v = solve_poisson(PoissonProblem(domain, ScalarField(domain, div)))
    grad_v = gradient(v)
    grad_w = StrainField(domain, beta.values - Y.values - grad_v.values)
    return HelmholtzSplit(Y, grad_v, grad_w, z, v)


def helmholtz_study(beta_fn: Callable, bbox=(0.0, 0.0, 1.0, 1.0), levels=(16, 32, 64)) -> list[dict]:
    """Split ``beta_fn`` sampled at several resolutions and record the residuals.

    Each row carries the reconstruction error, max |div Y|, max |curl grad v|
    and the harmonic residual of grad w, plus the observed order of the
    harmonic residual against the previous level.
    """
    x0, y0, x1, y1 = bbox
    rows = []
    for n in levels:
        d = Domain.rectangle(x0, y0, x1, y1, (x1 - x0) / n)
        beta = StrainField.from_function(d, beta_fn)
        sp_ = helmholtz_split(beta)
        rec = float(np.max(np.abs(sp_.Y.values + sp_.grad_v.values + sp_.grad_w.values - beta.values)))
        inner = shrink(d.node_mask())
        divY = float(np.max(np.abs(discrete_div(sp_.Y).values[inner])))
        curlv = float(np.max(np.abs(discrete_curl(sp_.grad_v).values[inner])))
        harm = laplacian_residual(sp_.grad_w)
        row = {"n": n, "h": d.h, "reconstruction": rec, "div_Y": divY,
               "curl_grad_v": curlv, "harmonic_residual": harm, "order": float("nan")}
        if rows and rows[-1]["harmonic_residual"] > 0 and harm > 0:
            row["order"] = float(np.log(rows[-1]["harmonic_residual"] / harm)
                                 / np.log(rows[-1]["h"] / d.h))
        rows.append(row)
    return rows
