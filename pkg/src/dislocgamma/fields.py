"""Grid fields on planar domains, discrete differential operators and norms.

Grids are node based with uniform spacing ``h``.  Arrays are indexed
``values[iy, ix, ...]`` so that axis 1 runs along x and axis 0 along y.
Matrix fields use the row convention: row i of beta is the gradient of the
i-th component of a displacement when beta is compatible, so

    (curl beta)_i = d1 beta_{i2} - d2 beta_{i1},
    (div beta)_i  = d1 beta_{i1} + d2 beta_{i2}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .wells import J

KINDS = ("rectangle", "annulus", "cut_annulus", "polygon")


def _polygon_contains(verts: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Even-odd ray casting; points on edges count as inside."""
    inside = np.zeros(x.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        cond = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (x < xc)
    on_edge = polygon_boundary_distance(verts, x, y) < 1e-12
    return inside | on_edge


def polygon_boundary_distance(verts: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distance from points to the polygon boundary."""
    d = np.full(np.shape(x), np.inf)
    n = len(verts)
    for k in range(n):
        a = verts[k]
        b = verts[(k + 1) % n]
        ab = b - a
        t = ((x - a[0]) * ab[0] + (y - a[1]) * ab[1]) / float(ab @ ab)
        t = np.clip(t, 0.0, 1.0)
        px = a[0] + t * ab[0]
        py = a[1] + t * ab[1]
        d = np.minimum(d, np.hypot(x - px, y - py))
    return d


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class Domain:
    """A planar domain sampled on a uniform node grid.

    Parameters
    ----------
    kind : str
        One of ``rectangle``, ``annulus``, ``cut_annulus`` or ``polygon``.
    params : tuple
        ``(x0, y0, x1, y1)`` for rectangles, ``(cx, cy, r_in, r_out)`` for
        (cut) annuli (``r_in = 0`` gives a disk), a tuple of vertices for
        polygons.
    h : float
        Grid spacing.
    """

    kind: str
    params: tuple
    h: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            if not (x1 > x0 and y1 > y0):
                raise ValueError("degenerate rectangle")
        elif self.kind in ("annulus", "cut_annulus"):
            _, _, r0, r1 = self.params
            if not (0 <= r0 < r1):
                raise ValueError("annulus requires 0 <= r_inner < r_outer")
        else:
            v = np.asarray(self.params, float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise ValueError("polygon needs at least three vertices")
            n = len(v)
            for i in range(n):
                for j in range(i + 2, n):
                    if i == 0 and j == n - 1:
                        continue
                    if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                        raise ValueError("polygon is not simple")

    # constructors -------------------------------------------------------
    @classmethod
    def rectangle(cls, x0, y0, x1, y1, h) -> "Domain":
        return cls("rectangle", (float(x0), float(y0), float(x1), float(y1)), float(h))

    @classmethod
    def disk(cls, center=(0.0, 0.0), radius=1.0, h=1 / 64) -> "Domain":
        return cls("annulus", (float(center[0]), float(center[1]), 0.0, float(radius)), float(h))

    @classmethod
    def annulus(cls, center, r_inner, r_outer, h) -> "Domain":
        return cls("annulus", (float(center[0]), float(center[1]), float(r_inner), float(r_outer)), float(h))

    @classmethod
    def cut_annulus(cls, center, r_inner, r_outer, h) -> "Domain":
        return cls("cut_annulus", (float(center[0]), float(center[1]), float(r_inner), float(r_outer)), float(h))

    @classmethod
    def polygon(cls, vertices: Sequence[Sequence[float]], h) -> "Domain":
        return cls("polygon", tuple(tuple(map(float, v)) for v in vertices), float(h))

    # grid ---------------------------------------------------------------
    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self.kind == "rectangle":
            return self.params
        if self.kind in ("annulus", "cut_annulus"):
            cx, cy, _, r = self.params
            n = math.ceil(r / self.h - 1e-9)
            return (cx - n * self.h, cy - n * self.h, cx + n * self.h, cy + n * self.h)
        v = np.asarray(self.params)
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    @property
    def shape(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.bbox
        nx = int(round((x1 - x0) / self.h)) + 1
        ny = int(round((y1 - y0) / self.h)) + 1
        return ny, nx

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays X, Y of shape ``self.shape``."""
        x0, y0, _, _ = self.bbox
        ny, nx = self.shape
        x = x0 + self.h * np.arange(nx)
        y = y0 + self.h * np.arange(ny)
        return np.meshgrid(x, y, indexing="xy")

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        tol = 1e-9 * self.h
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
        if self.kind in ("annulus", "cut_annulus"):
            cx, cy, r0, r1 = self.params
            r = np.hypot(x - cx, y - cy)
            ok = (r >= r0 - tol) & (r <= r1 + tol)
            if self.kind == "cut_annulus":
                ok &= ~((np.abs(y - cy) < 0.5 * self.h) & (x > cx))
            return ok
        return _polygon_contains(np.asarray(self.params, float), x, y)

    def boundary_distance(self, x, y) -> np.ndarray:
        """Distance to the boundary for points inside the domain."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return np.minimum.reduce([x - x0, x1 - x, y - y0, y1 - y])
        if self.kind in ("annulus", "cut_annulus"):
            cx, cy, r0, r1 = self.params
            r = np.hypot(x - cx, y - cy)
            d = r1 - r
            if r0 > 0:
                d = np.minimum(d, r - r0)
            if self.kind == "cut_annulus":
                d = np.minimum(d, np.where(x > cx, np.abs(y - cy), np.hypot(x - cx, y - cy)))
            return d
        return polygon_boundary_distance(np.asarray(self.params, float), x, y)

    @property
    def area(self) -> float:
        if self.kind == "rectangle":
            x0, y0, x1, y1 = self.params
            return (x1 - x0) * (y1 - y0)
        if self.kind in ("annulus", "cut_annulus"):
            _, _, r0, r1 = self.params
            return math.pi * (r1 ** 2 - r0 ** 2)
        v = np.asarray(self.params, float)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def node_mask(self) -> np.ndarray:
        X, Y = self.coords()
        return self.contains(X, Y)

    def interior_mask(self) -> np.ndarray:
        """Nodes whose four neighbours are also in the domain."""
        return shrink(self.node_mask())

    def classify(self) -> np.ndarray:
        """0 exterior, 1 boundary, 2 interior, per node."""
        m = self.node_mask()
        c = np.zeros(m.shape, dtype=np.int8)
        c[m] = 1
        c[self.interior_mask()] = 2
        return c

    def interior_connected(self) -> bool:
        _, n = ndimage.label(self.interior_mask())
        return n == 1

    def node_weights(self) -> np.ndarray:
        """Quadrature weights: trapezoid on rectangles, cell counts otherwise."""
        m = self.node_mask()
        h2 = self.h * self.h
        if self.kind == "rectangle":
            ny, nx = self.shape
            wx = np.ones(nx)
            wx[[0, -1]] = 0.5
            wy = np.ones(ny)
            wy[[0, -1]] = 0.5
            return h2 * np.outer(wy, wx)
        return h2 * m.astype(float)

    def refined(self, factor: int = 2) -> "Domain":
        return Domain(self.kind, self.params, self.h / factor)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params), "h": self.h}


def _jsonable(obj):
    if isinstance(obj, (tuple, list)):
        return [_jsonable(o) for o in obj]
    return obj


def shrink(mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` whose 4-neighbours all lie in ``mask``."""
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = out[-1, :] = False
    out[:, 0] = out[:, -1] = False
    return out


def deep_interior(mask: np.ndarray, layers: int = 2) -> np.ndarray:
    """Nodes at grid distance >= ``layers`` (in the max norm) from the complement."""
    st = np.ones((3, 3), dtype=bool)
    out = ndimage.binary_erosion(mask, structure=st, iterations=layers, border_value=0)
    return out


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


Core = tuple  # (cx, cy, radius)


def core_mask(domain: Domain, cores: Sequence[Core]) -> np.ndarray:
    """Nodes lying strictly inside any excised core disk."""
    X, Y = domain.coords()
    m = np.zeros(domain.shape, dtype=bool)
    for cx, cy, r in cores:
        m |= np.hypot(X - cx, Y - cy) < r
    return m


@dataclass(frozen=True, eq=False)
class GridField:
    """Values per node of a domain, with optional excised core disks.

    ``values`` has shape ``domain.shape + component_shape``.  Values at nodes
    outside the valid region are stored as zeros and never read by the
    operators.
    """

    domain: Domain
    values: np.ndarray
    cores: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[:2] != self.domain.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.domain.shape}")
        cores = tuple(tuple(map(float, c)) for c in self.cores)
        for cx, cy, r in cores:
            if not (self.domain.contains(cx, cy) and self.domain.boundary_distance(cx, cy) >= r):
                raise ValueError("core disk leaves the domain")
        v = np.where(self._valid_from(cores)[(...,) + (None,) * (v.ndim - 2)], v, 0.0)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite values on the valid region")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cores", cores)

    def _valid_from(self, cores) -> np.ndarray:
        m = self.domain.node_mask()
        if cores:
            m &= ~core_mask(self.domain, cores)
        return m

    @property
    def valid(self) -> np.ndarray:
        return self._valid_from(self.cores)

    @property
    def component_shape(self) -> tuple:
        return self.values.shape[2:]

    def weights(self) -> np.ndarray:
        return self.domain.node_weights() * self.valid

    def magnitude(self) -> np.ndarray:
        axes = tuple(range(2, self.values.ndim))
        if not axes:
            return np.abs(self.values)
        return np.sqrt(np.sum(self.values ** 2, axis=axes))

    @classmethod
    def from_function(cls, domain: Domain, fn: Callable, cores: Sequence[Core] = ()):
        """Sample ``fn(X, Y)`` at valid nodes; invalid nodes are never evaluated."""
        X, Y = domain.coords()
        valid = domain.node_mask()
        if cores:
            valid &= ~core_mask(domain, cores)
        sample = np.asarray(fn(X[valid], Y[valid]), dtype=float)
        out = np.zeros(domain.shape + sample.shape[1:])
        out[valid] = sample
        return cls(domain, out, tuple(cores))

    def with_values(self, values: np.ndarray):
        return type(self)(self.domain, values, self.cores)


class ScalarField(GridField):
    """Scalar or vector potential sampled on the grid."""


class StrainField(GridField):
    """A 2x2-matrix valued field."""

    def __post_init__(self):
        super().__post_init__()
        if self.component_shape != (2, 2):
            raise ValueError("strain fields carry 2x2 matrices")


class VectorMeasureSample(GridField):
    """A vector-valued measure: grid density plus optional atoms.

    ``atoms`` is a tuple of ``((x, y), (w1, w2))`` pairs.
    """

    def __init__(self, domain: Domain, values=None, cores=(), atoms=()):
        if values is None:
            values = np.zeros(domain.shape + (2,))
        super().__init__(domain, values, cores)
        atoms = tuple((tuple(map(float, p)), tuple(map(float, w))) for p, w in atoms)
        for p, _ in atoms:
            if not self.domain.contains(*p):
                raise ValueError(f"atom {p} lies outside the domain")
        object.__setattr__(self, "atoms", atoms)

    def with_values(self, values):
        return VectorMeasureSample(self.domain, values, self.cores, self.atoms)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def partial(f: np.ndarray, valid: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Derivative along ``axis`` (1 = x, 0 = y) restricted to ``valid`` nodes.

    Centered where both neighbours are valid, second-order one-sided where two
    consecutive neighbours on one side are valid, first order otherwise.
    """
    f = np.asarray(f, float)
    extra = f.ndim - 2
    expand = (...,) + (None,) * extra

    def shift(a, k):
        out = np.zeros_like(a)
        n = a.shape[axis]
        src = [slice(None)] * a.ndim
        dst = [slice(None)] * a.ndim
        if k > 0:
            src[axis] = slice(k, n)
            dst[axis] = slice(0, n - k)
        else:
            src[axis] = slice(0, n + k)
            dst[axis] = slice(-k, n)
        out[tuple(dst)] = a[tuple(src)]
        return out

    v = valid.astype(bool)
    p1, p2 = shift(v, 1), shift(v, 2)
    m1, m2 = shift(v, -1), shift(v, -2)
    fp1, fp2 = shift(f, 1), shift(f, 2)
    fm1, fm2 = shift(f, -1), shift(f, -2)

    d = np.zeros_like(f)
    cen = v & p1 & m1
    fw2 = v & ~cen & p1 & p2
    bw2 = v & ~cen & ~fw2 & m1 & m2
    fw1 = v & ~cen & ~fw2 & ~bw2 & p1
    bw1 = v & ~cen & ~fw2 & ~bw2 & ~fw1 & m1
    d = np.where(cen[expand], (fp1 - fm1) / (2 * h), d)
    d = np.where(fw2[expand], (-3 * f + 4 * fp1 - fp2) / (2 * h), d)
    d = np.where(bw2[expand], (3 * f - 4 * fm1 + fm2) / (2 * h), d)
    d = np.where(fw1[expand], (fp1 - f) / h, d)
    d = np.where(bw1[expand], (f - fm1) / h, d)
    return d


def gradient(u: GridField) -> GridField:
    """Gradient of a scalar field (vector result) or a vector field (rows)."""
    h, valid = u.domain.h, u.valid
    dx = partial(u.values, valid, 1, h)
    dy = partial(u.values, valid, 0, h)
    g = np.stack([dx, dy], axis=-1)
    if u.values.ndim == 3 and u.values.shape[2] == 2:
        return StrainField(u.domain, g, u.cores)
    return VectorMeasureSample(u.domain, g, u.cores)


def discrete_curl(beta: StrainField) -> VectorMeasureSample:
    """Row-wise scalar curl, (curl beta)_i = d1 beta_i2 - d2 beta_i1."""
    h, valid, b = beta.domain.h, beta.valid, beta.values
    c = partial(b[..., 1], valid, 1, h) - partial(b[..., 0], valid, 0, h)
    return VectorMeasureSample(beta.domain, c, beta.cores)


def discrete_div(beta: StrainField) -> VectorMeasureSample:
    """Row divergence, (div beta)_i = d1 beta_i1 + d2 beta_i2."""
    h, valid, b = beta.domain.h, beta.valid, beta.values
    d = partial(b[..., 0], valid, 1, h) + partial(b[..., 1], valid, 0, h)
    return VectorMeasureSample(beta.domain, d, beta.cores)


def rot_J(grad: StrainField) -> StrainField:
    """Right multiplication by J, row g -> (g2, -g1)."""
    return StrainField(grad.domain, grad.values @ J, grad.cores)


# ---------------------------------------------------------------------------
# sampling and line integrals
# ---------------------------------------------------------------------------


def bilinear(fld: GridField, x: np.ndarray, y: np.ndarray, strict: bool = True) -> np.ndarray:
    """Bilinear interpolation of node values at points.

    With ``strict`` every point must have its four surrounding nodes valid.
    """
    d = fld.domain
    x0, y0, _, _ = d.bbox
    ny, nx = d.shape
    fx = (np.asarray(x, float) - x0) / d.h
    fy = (np.asarray(y, float) - y0) / d.h
    i = np.clip(np.floor(fx).astype(int), 0, nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, ny - 2)
    tx = fx - i
    ty = fy - j
    if strict:
        outside = (fx < -1e-9) | (fx > nx - 1 + 1e-9) | (fy < -1e-9) | (fy > ny - 1 + 1e-9)
        v = fld.valid
        ok = v[j, i] & v[j, i + 1] & v[j + 1, i] & v[j + 1, i + 1]
        if np.any(outside) or not np.all(ok):
            raise ValueError("sample points leave the valid region")
    extra = (...,) + (None,) * (fld.values.ndim - 2)
    tx, ty = tx[extra], ty[extra]
    V = fld.values
    return ((1 - tx) * (1 - ty) * V[j, i] + tx * (1 - ty) * V[j, i + 1]
            + (1 - tx) * ty * V[j + 1, i] + tx * ty * V[j + 1, i + 1])


def circle_samples(radius: float, h: float) -> int:
    return 8 * math.ceil(2 * math.pi * radius / h)


def circulation(beta, center, radius: float, n: int | None = None) -> np.ndarray:
    """Counterclockwise line integral of beta t over a circle.

    ``beta`` is a :class:`StrainField` (bilinear sampling, ``8 ceil(2 pi r/h)``
    samples) or a callable ``beta(x, y) -> (..., 2, 2)``.
    """
    cx, cy = center
    if n is None:
        h = beta.domain.h if isinstance(beta, GridField) else radius / 64
        n = circle_samples(radius, h)
    th = 2 * np.pi * np.arange(n) / n
    x = cx + radius * np.cos(th)
    y = cy + radius * np.sin(th)
    t = np.stack([-np.sin(th), np.cos(th)], axis=-1)
    if isinstance(beta, GridField):
        if np.any(~beta.domain.contains(x, y)):
            raise ValueError("circle exits the domain")
        vals = bilinear(beta, x, y)
    else:
        vals = np.asarray(beta(x, y), float)
    bt = np.einsum("kij,kj->ki", vals, t)
    return bt.mean(axis=0) * 2 * np.pi * radius


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _mag_and_weights(f) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(f, GridField):
        w = f.weights()
        m = f.magnitude()
        keep = w > 0
        return m[keep], w[keep]
    raise TypeError("expected a grid field")


def lp_norm(f: GridField, p: float) -> float:
    """Riemann-sum L^p norm over the valid region."""
    if p < 1:
        raise ValueError("p must be >= 1")
    m, w = _mag_and_weights(f)
    return float(np.sum(w * m ** p) ** (1.0 / p))


def weak_lp_quasinorm(f: GridField, p: float) -> float:
    """sup_lambda lambda * |{|f| >= lambda}|^(1/p) over the node magnitudes.

    The supremum of lambda |{|f| > lambda}|^(1/p) over all lambda > 0 is
    approached from below each distinct magnitude, which gives the closed
    level sets used here.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    m, w = _mag_and_weights(f)
    if m.size == 0:
        return 0.0
    order = np.argsort(-m, kind="stable")
    ms = m[order]
    cw = np.cumsum(w[order])
    # for ties keep the largest cumulative measure
    last = np.r_[ms[1:] != ms[:-1], True]
    return float(np.max(ms[last] * cw[last] ** (1.0 / p)))


def total_variation(mu: VectorMeasureSample) -> float:
    """Mass of a vector measure: density part plus atom norms."""
    tv = float(np.sum(mu.weights() * mu.magnitude()))
    for _, w in getattr(mu, "atoms", ()):
        tv += math.hypot(*w)
    return tv


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

_MAGIC = "# dislocgamma field snapshot v1"


def write_snapshot(path, fld: GridField, binary: bool = True) -> None:
    """Write a text header followed by binary (little-endian f8) or CSV values."""
    header = {
        "type": type(fld).__name__,
        "domain": fld.domain.describe(),
        "shape": list(fld.values.shape),
        "cores": [list(c) for c in fld.cores],
        "encoding": "binary" if binary else "csv",
    }
    lines = [_MAGIC] + [f"{k} {json.dumps(v)}" for k, v in header.items()] + ["END", ""]
    head = "\n".join(lines).encode()
    data = np.ascontiguousarray(fld.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            fh.write(data.tobytes())
        else:
            flat = data.reshape(-1, int(np.prod(data.shape[2:], dtype=int)) or 1)
            for row in flat:
                fh.write((",".join(repr(float(v)) for v in row) + "\n").encode())


def read_snapshot(path) -> GridField:
    raw = Path(path).read_bytes()
    end = raw.index(b"\nEND\n")
    lines = raw[:end].decode().splitlines()
    if lines[0] != _MAGIC:
        raise ValueError("not a field snapshot")
    meta = {}
    for ln in lines[1:]:
        k, v = ln.split(" ", 1)
        meta[k] = json.loads(v)
    body = raw[end + len(b"\nEND\n"):]
    shape = tuple(meta["shape"])
    if meta["encoding"] == "binary":
        values = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
    else:
        rows = [list(map(float, ln.split(","))) for ln in body.decode().splitlines() if ln]
        values = np.array(rows, dtype=float).reshape(shape)
    dd = meta["domain"]
    params = dd["params"]
    params = tuple(tuple(p) for p in params) if dd["kind"] == "polygon" else tuple(params)
    domain = Domain(dd["kind"], params, dd["h"])
    cls = {"StrainField": StrainField, "ScalarField": ScalarField,
           "VectorMeasureSample": VectorMeasureSample}.get(meta["type"], GridField)
    return cls(domain, values, tuple(tuple(c) for c in meta["cores"]))
