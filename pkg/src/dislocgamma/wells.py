"""Multiwell geometry and elastic energy densities.

The multiwell set is K = SO(2)U_1 u ... u SO(2)U_l.  Distances to a single
well are computed in closed form: for F and a well U,

    min_theta |F - R(theta) U|^2 = |F|^2 - 2 sqrt(a^2 + b^2) + |U|^2,

with a = <F, U> and b = <F, J U> (Frobenius products), attained at
theta = atan2(b, a).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

J = np.array([[0.0, -1.0], [1.0, 0.0]])

#: Tolerance for the pairwise incompatibility check of wells.
INCOMPAT_TOL = 1e-9


def rotation(theta: float) -> np.ndarray:
    """Counterclockwise rotation matrix R(theta)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _frob(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def optimal_angle(F: np.ndarray, U: np.ndarray) -> float:
    """Angle theta maximizing <F, R(theta) U>."""
    F = np.asarray(F, dtype=float)
    a = _frob(F, U)
    b = _frob(F, J @ U)
    return float(np.arctan2(b, a))


def _dist_sq(F: np.ndarray, U: np.ndarray) -> float:
    a = _frob(F, U)
    b = _frob(F, J @ U)
    d2 = _frob(F, F) - 2.0 * np.hypot(a, b) + _frob(U, U)
    return max(d2, 0.0)


def orbit_distance(U: np.ndarray, V: np.ndarray) -> float:
    """Distance between the orbits SO(2)U and SO(2)V.

    Reduces to a single minimization over the relative angle, solved exactly
    by :func:`optimal_angle`.
    """
    return float(np.sqrt(_dist_sq(np.asarray(V, float), np.asarray(U, float))))


def orbit_max_distance(U: np.ndarray, V: np.ndarray) -> float:
    """max over rotations of |R U - V| (used for diam K)."""
    a = _frob(V, U)
    b = _frob(V, J @ U)
    return float(np.sqrt(_frob(U, U) + _frob(V, V) + 2.0 * np.hypot(a, b)))


@dataclass(frozen=True, eq=False)
class WellSet:
    """The compact set K = union of SO(2)U_i.

    Parameters
    ----------
    wells : sequence of 2x2 arrays
        Invertible well matrices. Stored as read-only float arrays.
    """

    wells: tuple = field()

    def __init__(self, wells: Sequence[np.ndarray]):
        mats = []
        for U in wells:
            U = np.array(U, dtype=float).reshape(2, 2)
            U.setflags(write=False)
            mats.append(U)
        if not mats:
            raise ValueError("at least one well is required")
        object.__setattr__(self, "wells", tuple(mats))
        self._validate()

    def _validate(self) -> None:
        for k, U in enumerate(self.wells):
            if abs(np.linalg.det(U)) < INCOMPAT_TOL:
                raise ValueError(f"well {k} is singular")
        for i in range(self.count):
            for j in range(i + 1, self.count):
                M = self.wells[i] @ np.linalg.inv(self.wells[j])
                sv = np.linalg.svd(M, compute_uv=False)
                if np.all(np.abs(sv - 1.0) < INCOMPAT_TOL) and np.linalg.det(M) > 0:
                    raise ValueError(f"wells {i} and {j} lie on the same SO(2) orbit")

    @property
    def count(self) -> int:
        return len(self.wells)

    def pair_distance(self, i: int, j: int) -> float:
        """dist(K_i, K_j)."""
        return orbit_distance(self.wells[i], self.wells[j])

    @property
    def rho_sep(self) -> float:
        """(1/8) min_{i != j} dist(K_i, K_j); infinite for a single well."""
        if self.count < 2:
            return float("inf")
        d = min(
            self.pair_distance(i, j)
            for i in range(self.count)
            for j in range(i + 1, self.count)
        )
        return d / 8.0

    @property
    def k_infty(self) -> float:
        return max(float(np.linalg.norm(U)) for U in self.wells)

    @property
    def diam(self) -> float:
        return max(
            orbit_max_distance(U, V) for U in self.wells for V in self.wells
        )

    @property
    def big_M(self) -> float:
        return max(self.diam, self.k_infty)

    def identity_is_well(self, tol: float = 1e-12) -> bool:
        """Whether I lies in K (the convention U_1 = I or any equivalent)."""
        return self.dist_to_K(np.eye(2))[0] < tol

    def dist_to_well(self, F: np.ndarray, i: int) -> float:
        """Frobenius distance from F to SO(2)U_i."""
        if not 0 <= i < self.count:
            raise IndexError(f"well index {i} out of range")
        return float(np.sqrt(_dist_sq(np.asarray(F, float), self.wells[i])))

    def dist_to_K(self, F: np.ndarray) -> tuple[float, int, float]:
        """Distance to K with the minimizing well and rotation angle.

        Ties are resolved in favour of the lowest well index.
        """
        F = np.asarray(F, dtype=float)
        best = (np.inf, -1, 0.0)
        for i, U in enumerate(self.wells):
            d = np.sqrt(_dist_sq(F, U))
            if d < best[0]:
                best = (float(d), i, optimal_angle(F, U))
        return best

    def dist_sq_field(self, F: np.ndarray) -> np.ndarray:
        """Vectorized dist^2(F, K) for an array of shape (..., 2, 2)."""
        F = np.asarray(F, dtype=float)
        ff = np.einsum("...ij,...ij->...", F, F)
        out = np.full(ff.shape, np.inf)
        for U in self.wells:
            a = np.einsum("...ij,ij->...", F, U)
            b = np.einsum("...ij,ij->...", F, J @ U)
            d2 = ff - 2.0 * np.hypot(a, b) + _frob(U, U)
            out = np.minimum(out, d2)
        return np.maximum(out, 0.0)


def identity_form() -> np.ndarray:
    """The quadratic form A:B (identity on 2x2 matrices) as a 2x2x2x2 tensor."""
    return np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))


def normal_projection_form(U: np.ndarray) -> np.ndarray:
    """Hessian of dist^2 at a well point: 2 (A:B - (A:JU)(B:JU)/|U|^2)."""
    U = np.asarray(U, dtype=float)
    T = J @ U
    return 2.0 * (identity_form() - np.einsum("ij,kl->ijkl", T, T) / _frob(U, U))


def apply_form(C: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Evaluate C A:B, broadcasting over leading axes of A and B."""
    return np.einsum("ijkl,...ij,...kl->...", C, A, B)


@dataclass(frozen=True)
class ElasticDensity:
    """A concrete density W satisfying the growth and frame-indifference
    assumptions, together with its Hessians at the wells.

    Parameters
    ----------
    well_set : WellSet
    mode : {"dist2", "iso"}
        ``"dist2"`` uses W = dist^2(F, K) (C1 = C2 = 1) and Hessians
        2 P_normal.  ``"iso"`` uses W = (1/2) min_i |F - U_i|^2 whose Hessian
        is the identity form; it is not frame indifferent and exists for
        closed-form checks only.
    """

    well_set: WellSet
    mode: str = "dist2"

    def __post_init__(self):
        if self.mode not in ("dist2", "iso"):
            raise ValueError(f"unknown density mode {self.mode!r}")

    @property
    def growth_constants(self) -> tuple[float, float]:
        return (1.0, 1.0) if self.mode == "dist2" else (0.5, np.inf)

    @property
    def frame_indifferent(self) -> bool:
        return self.mode == "dist2"

    def __call__(self, F: np.ndarray) -> np.ndarray:
        """W(F) for F of shape (..., 2, 2)."""
        F = np.asarray(F, dtype=float)
        if self.mode == "dist2":
            return self.well_set.dist_sq_field(F)
        out = None
        for U in self.well_set.wells:
            d = F - U
            v = 0.5 * np.einsum("...ij,...ij->...", d, d)
            out = v if out is None else np.minimum(out, v)
        return out

    def well_index(self, U: np.ndarray) -> int:
        for i, V in enumerate(self.well_set.wells):
            if np.allclose(U, V, atol=1e-12):
                return i
        raise KeyError("matrix is not a configured well")

    def hessian(self, i: int) -> np.ndarray:
        """C_{U_i} as a 2x2x2x2 tensor."""
        U = self.well_set.wells[i]
        if self.mode == "dist2":
            return normal_projection_form(U)
        return identity_form()

    def apply_C_U(self, U: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
        """C_U A:B for a configured well U."""
        C = self.hessian(self.well_index(np.asarray(U, float)))
        return float(apply_form(C, np.asarray(A, float), np.asarray(B, float)))

    def describe(self) -> dict:
        """Explicit record of the chosen Hessians, for reports."""
        return {
            "mode": self.mode,
            "wells": [U.tolist() for U in self.well_set.wells],
            "C_U": [self.hessian(i).reshape(4, 4).tolist()
                    for i in range(self.well_set.count)],
        }


def form_is_coercive_on_sym(C: np.ndarray, tol: float = 1e-10) -> tuple[bool, float]:
    """Largest lambda with lambda |sym A|^2 <= C A:A for all A.

    Minimizes over the skew part first (a Schur complement) and then takes the
    smallest eigenvalue on symmetric matrices.
    """
    M = C.reshape(4, 4)
    M = 0.5 * (M + M.T)
    S = np.array([[1, 0, 0, 0], [0, 1, 1, 0], [0, 0, 0, 1]], float)
    S[1] /= np.sqrt(2.0)
    k = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    Mss = S @ M @ S.T
    Msk = S @ M @ k
    Mkk = float(k @ M @ k)
    if Mkk > tol:
        Mss = Mss - np.outer(Msk, Msk) / Mkk
    elif np.linalg.norm(Msk) > tol:
        return False, -np.inf
    lam = float(np.linalg.eigvalsh(Mss).min())
    return lam > tol, lam
