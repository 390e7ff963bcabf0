"""B-spline and NURBS evaluation kernel.

Univariate bases are evaluated with the Cox-de Boor recursion restricted to
the local knot span, so only the ``p + 1`` functions supported there are ever
touched.  Tensor-product rational (NURBS) bases carry physical-space first
and second derivatives obtained by inverting the geometry Jacobian, which is
what plate bending needs.  Conic geometries (disk, circular arcs) are exact
through the standard rational weights.

All patch data is immutable in practice: evaluation routines never mutate a
patch, so patches may be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "GeometryError",
    "KnotVector",
    "NurbsPatch",
    "eval_basis_1d",
    "eval_patch_1d",
    "eval_patch_2d",
    "eval_boundary",
    "boundary_param_to_uv",
    "eval_scalar_third_derivatives",
    "h_refine",
    "insert_knots",
    "make_geometry",
    "make_square",
    "make_rod",
    "make_disk",
    "make_quarter_annulus",
    "interpolate_coefficients",
    "write_patch_text",
    "read_patch_text",
    "parse_patch_text",
]


class GeometryError(RuntimeError):
    """Geometry map degenerated or an input left the parametric domain."""


# ---------------------------------------------------------------------------
# Knot vectors and univariate bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector with degree ``p``.

    Attributes
    ----------
    values : np.ndarray
        Non-decreasing knot values; first and last knots repeated ``p + 1``
        times.
    degree : int
        Polynomial degree ``p >= 0``.
    """

    values: np.ndarray
    degree: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if np.any(np.diff(vals) < 0):
            raise ValueError("knot values must be non-decreasing")
        if len(vals) < 2 * (p + 1):
            raise ValueError("knot vector too short for clamped degree %d" % p)
        if not (np.allclose(vals[: p + 1], vals[0]) and np.allclose(vals[-p - 1:], vals[-1])):
            raise ValueError("knot vector must be clamped (end multiplicity p + 1)")
        if self.n < p + 1:
            raise ValueError("need at least p + 1 basis functions")

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return len(self.values) - self.degree - 1

    @property
    def start(self) -> float:
        return float(self.values[self.degree])

    @property
    def end(self) -> float:
        return float(self.values[-self.degree - 1])

    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.values)

    def spans(self) -> list[tuple[float, float]]:
        """Nonzero knot spans as (a, b) pairs, ordered."""
        bp = self.breakpoints()
        return [(float(a), float(b)) for a, b in zip(bp[:-1], bp[1:])]

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages), one per basis function."""
        p = self.degree
        if p == 0:
            return 0.5 * (self.values[:-1] + self.values[1:])
        return np.array([self.values[i + 1: i + p + 1].mean() for i in range(self.n)])


def find_span(values: np.ndarray, degree: int, u: float) -> int:
    """Index ``k`` with ``values[k] <= u < values[k+1]`` (last span at the end)."""
    p = degree
    n = len(values) - p - 1
    if u >= values[n]:
        k = n - 1
        while values[k] == values[k + 1]:
            k -= 1
        return k
    if u <= values[p]:
        return p
    return int(np.searchsorted(values, u, side="right") - 1)


def basis_ders(values: np.ndarray, degree: int, u: float, nders: int) -> tuple[int, np.ndarray]:
    """Nonzero basis functions and derivatives at ``u``.

    Returns the span index and an array ``ders`` of shape
    ``(nders + 1, p + 1)`` where row ``k`` holds the k-th derivative of the
    ``p + 1`` functions ``N_{span-p} .. N_{span}``.
    """
    p = degree
    span = find_span(values, p, u)
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - values[span + 1 - j]
        right[j] = values[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nders + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, min(nders, p) + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    # multiply through by the factorial-style factors
    r = float(p)
    for k in range(1, min(nders, p) + 1):
        ders[k, :] *= r
        r *= p - k
    return span, ders


def eval_basis_1d(kv: KnotVector, u: float) -> tuple[int, np.ndarray]:
    """Values, first and second derivatives of the ``p + 1`` nonzero functions.

    Returns ``(span, ders)`` with ``ders`` of shape ``(3, p + 1)``.
    Raises :class:`GeometryError` if ``u`` lies outside the knot range.
    """
    if u < kv.start - 1e-12 or u > kv.end + 1e-12:
        raise GeometryError(f"parameter {u} outside knot range [{kv.start}, {kv.end}]")
    return basis_ders(kv.values, kv.degree, float(np.clip(u, kv.start, kv.end)), 2)


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NurbsPatch:
    """Tensor-product NURBS patch (parametric dimension 1 or 2).

    ``control_points`` has shape ``(n_u, dim)`` for curves or
    ``(n_u, n_v, dim)`` for surfaces; ``weights`` matches the grid shape and
    must be positive.  ``knots_v`` is ``None`` for curves.
    """

    knots_u: KnotVector
    knots_v: KnotVector | None
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)
        if self.knots_v is None:
            if cp.ndim != 2 or cp.shape[0] != self.knots_u.n:
                raise ValueError("curve control grid must be (n_u, dim)")
            if w.shape != (self.knots_u.n,):
                raise ValueError("curve weights must be (n_u,)")
        else:
            if cp.ndim != 3 or cp.shape[:2] != (self.knots_u.n, self.knots_v.n):
                raise ValueError("surface control grid must be (n_u, n_v, dim)")
            if w.shape != (self.knots_u.n, self.knots_v.n):
                raise ValueError("surface weights must be (n_u, n_v)")
        if np.any(w <= 0):
            raise ValueError("all weights must be positive")

    @property
    def pdim(self) -> int:
        return 1 if self.knots_v is None else 2

    @property
    def dim(self) -> int:
        return int(self.control_points.shape[-1])

    @property
    def n_u(self) -> int:
        return self.knots_u.n

    @property
    def n_v(self) -> int:
        return 0 if self.knots_v is None else self.knots_v.n

    @property
    def n_basis(self) -> int:
        return self.n_u if self.pdim == 1 else self.n_u * self.n_v

    def flat_index(self, i: int, j: int = 0) -> int:
        """Row-major patch-local index of tensor basis function (i, j)."""
        if self.pdim == 1:
            return i
        return i * self.n_v + j

    def homogeneous(self) -> np.ndarray:
        """Control points in homogeneous form (w*x, ..., w)."""
        w = self.weights[..., None]
        return np.concatenate([self.control_points * w, w], axis=-1)

    def element_spans(self):
        """Nonzero parametric boxes: list of (u0, u1) or (u0, u1, v0, v1)."""
        su = self.knots_u.spans()
        if self.pdim == 1:
            return su
        sv = self.knots_v.spans()
        return [(u0, u1, v0, v1) for (u0, u1) in su for (v0, v1) in sv]

    def affine_scales(self):
        """If the map is a diagonal affine image of the parameter square,
        return ``(origin, scales)``; else ``None``.

        Diagonal-affine patches (all weights one, control net on the Greville
        grid of a rectangle) admit exact third-order physical derivatives.
        """
        if not np.allclose(self.weights, 1.0, atol=1e-14):
            return None
        gu = self.knots_u.greville()
        if self.pdim == 1:
            x0, x1 = self.control_points[0, 0], self.control_points[-1, 0]
            pred = x0 + (gu - gu[0]) / (gu[-1] - gu[0]) * (x1 - x0)
            if np.allclose(self.control_points[:, 0], pred, atol=1e-12 * max(1.0, abs(x1 - x0))):
                return np.array([x0]), np.array([(x1 - x0) / (self.knots_u.end - self.knots_u.start)])
            return None
        gv = self.knots_v.greville()
        c00 = self.control_points[0, 0]
        c10 = self.control_points[-1, 0]
        c01 = self.control_points[0, -1]
        lu = c10 - c00
        lv = c01 - c00
        if abs(lu[1]) > 1e-14 * max(1.0, abs(lu[0])) or abs(lv[0]) > 1e-14 * max(1.0, abs(lv[1])):
            return None
        pred = (c00[None, None, :]
                + ((gu - gu[0]) / (gu[-1] - gu[0]))[:, None, None] * lu[None, None, :]
                + ((gv - gv[0]) / (gv[-1] - gv[0]))[None, :, None] * lv[None, None, :])
        scale = max(1.0, float(np.abs(lu).max()), float(np.abs(lv).max()))
        if not np.allclose(self.control_points, pred, atol=1e-12 * scale):
            return None
        scales = np.array([lu[0] / (self.knots_u.end - self.knots_u.start),
                           lv[1] / (self.knots_v.end - self.knots_v.start)])
        return c00, scales


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class PatchEval:
    """Rational basis and geometry data at one parametric point.

    ``indices`` are patch-local flat basis indices of the nonzero functions.
    For surfaces ``d2R`` columns are (xx, yy, xy); ``jac`` columns are the
    parametric tangents d x / d(u, v).
    """

    indices: np.ndarray
    point: np.ndarray
    jac: np.ndarray
    det_jac: float
    R: np.ndarray
    dR: np.ndarray
    d2R: np.ndarray


def eval_patch_1d(patch: NurbsPatch, u: float) -> PatchEval:
    """Curve evaluation with physical first and second basis derivatives."""
    kv = patch.knots_u
    span, D = eval_basis_1d(kv, u)
    p = kv.degree
    idx = np.arange(span - p, span + 1)
    w = patch.weights[idx]
    P = patch.control_points[idx]

    wN = w * D[0]
    wNu = w * D[1]
    wNuu = w * D[2]
    W0, W1, W2 = wN.sum(), wNu.sum(), wNuu.sum()
    R = wN / W0
    Ru = (wNu - R * W1) / W0
    Ruu = (wNuu - 2.0 * Ru * W1 - R * W2) / W0

    point = R @ P
    dxdu = float(Ru @ P[:, 0])
    d2xdu2 = float(Ruu @ P[:, 0])
    if abs(dxdu) < 1e-14:
        raise GeometryError(f"singular curve Jacobian at u={u}")
    # chain rule through the scalar map x(u)
    dR = Ru / dxdu
    d2R = (Ruu - dR * d2xdu2) / dxdu**2
    return PatchEval(idx, np.atleast_1d(point), np.array([[dxdu]]), dxdu, R, dR, d2R)


def _rational_2d(patch: NurbsPatch, u: float, v: float, nders: int = 2):
    """Local rational basis values/parametric derivatives on a surface."""
    ku, kvv = patch.knots_u, patch.knots_v
    su, Du = basis_ders(ku.values, ku.degree, u, nders)
    sv, Dv = basis_ders(kvv.values, kvv.degree, v, nders)
    iu = np.arange(su - ku.degree, su + 1)
    iv = np.arange(sv - kvv.degree, sv + 1)
    w = patch.weights[np.ix_(iu, iv)]
    P = patch.control_points[np.ix_(iu, iv)]
    idx = (iu[:, None] * patch.n_v + iv[None, :]).ravel()
    return iu, iv, idx, w, P, Du, Dv


def eval_patch_2d(patch: NurbsPatch, u: float, v: float) -> PatchEval:
    """Surface evaluation: rational basis, geometry map and physical
    derivatives up to second order (chain rule through the inverse Jacobian).
    """
    if patch.pdim != 2:
        raise ValueError("eval_patch_2d needs a surface patch")
    ku, kvv = patch.knots_u, patch.knots_v
    if not (ku.start - 1e-12 <= u <= ku.end + 1e-12) or not (kvv.start - 1e-12 <= v <= kvv.end + 1e-12):
        raise GeometryError(f"parameters ({u}, {v}) outside the patch domain")
    u = float(np.clip(u, ku.start, ku.end))
    v = float(np.clip(v, kvv.start, kvv.end))
    _, _, idx, w, P, Du, Dv = _rational_2d(patch, u, v, 2)

    N = np.outer(Du[0], Dv[0])
    Nu = np.outer(Du[1], Dv[0])
    Nv = np.outer(Du[0], Dv[1])
    Nuu = np.outer(Du[2], Dv[0])
    Nvv = np.outer(Du[0], Dv[2])
    Nuv = np.outer(Du[1], Dv[1])

    wN = w * N
    W0 = wN.sum()
    Wu = (w * Nu).sum()
    Wv = (w * Nv).sum()
    Wuu = (w * Nuu).sum()
    Wvv = (w * Nvv).sum()
    Wuv = (w * Nuv).sum()

    R = wN / W0
    Ru = (w * Nu - R * Wu) / W0
    Rv = (w * Nv - R * Wv) / W0
    Ruu = (w * Nuu - 2.0 * Ru * Wu - R * Wuu) / W0
    Rvv = (w * Nvv - 2.0 * Rv * Wv - R * Wvv) / W0
    Ruv = (w * Nuv - Ru * Wv - Rv * Wu - R * Wuv) / W0

    Pf = P.reshape(-1, patch.dim)
    Rf = R.ravel()
    grad_par = np.stack([Ru.ravel(), Rv.ravel()], axis=1)          # (nbf, 2)
    hess_par = np.stack([Ruu.ravel(), Rvv.ravel(), Ruv.ravel()], axis=1)  # (nbf, uu/vv/uv)

    point = Rf @ Pf
    jac = grad_par.T @ Pf            # rows (u, v), cols (x, y) -> transpose below
    jac = jac.T                      # jac[a, b] = d x_a / d xi_b
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    scale = max(abs(jac).max(), 1e-300)
    if abs(det) < 1e-12 * scale * scale:
        raise GeometryError(f"singular geometry Jacobian at (u, v) = ({u}, {v})")
    jinv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det

    dR = grad_par @ jinv             # rows: grad in physical coords

    # map second derivatives: H_map[d] = [[x_d,uu, x_d,uv], [x_d,uv, x_d,vv]]
    map2 = hess_par.T @ Pf           # (3, dim): rows uu, vv, uv
    corr = np.empty_like(hess_par)
    corr[:, 0] = hess_par[:, 0] - dR @ map2[0]
    corr[:, 1] = hess_par[:, 1] - dR @ map2[1]
    corr[:, 2] = hess_par[:, 2] - dR @ map2[2]
    # physical Hessian: Jinv^T Hc Jinv with Hc = [[c0, c2], [c2, c1]]
    a, b, c, d = jinv[0, 0], jinv[0, 1], jinv[1, 0], jinv[1, 1]
    hxx = corr[:, 0] * a * a + 2.0 * corr[:, 2] * a * c + corr[:, 1] * c * c
    hyy = corr[:, 0] * b * b + 2.0 * corr[:, 2] * b * d + corr[:, 1] * d * d
    hxy = corr[:, 0] * a * b + corr[:, 2] * (a * d + b * c) + corr[:, 1] * c * d
    d2R = np.stack([hxx, hyy, hxy], axis=1)

    return PatchEval(idx, point, jac, float(det), Rf, dR, d2R)


def eval_scalar_third_derivatives(patch: NurbsPatch, u: float, v: float):
    """Third physical derivatives of the basis on a diagonal-affine patch.

    Returns ``(indices, d3)`` with ``d3`` columns (xxx, xxy, xyy, yyy).
    Only valid when :meth:`NurbsPatch.affine_scales` succeeds; plate shear
    terms rely on this path and plate domains are always rectangles here.
    """
    aff = patch.affine_scales()
    if aff is None:
        raise GeometryError("third derivatives require a diagonal-affine, unit-weight patch")
    _, scales = aff
    ku, kvv = patch.knots_u, patch.knots_v
    su, Du = basis_ders(ku.values, ku.degree, float(u), 3)
    sv, Dv = basis_ders(kvv.values, kvv.degree, float(v), 3)
    iu = np.arange(su - ku.degree, su + 1)
    iv = np.arange(sv - kvv.degree, sv + 1)
    idx = (iu[:, None] * patch.n_v + iv[None, :]).ravel()
    hx, hy = scales
    d3 = np.stack([
        np.outer(Du[3], Dv[0]).ravel() / hx**3,
        np.outer(Du[2], Dv[1]).ravel() / (hx**2 * hy),
        np.outer(Du[1], Dv[2]).ravel() / (hx * hy**2),
        np.outer(Du[0], Dv[3]).ravel() / hy**3,
    ], axis=1)
    return idx, d3


# boundary sides of a surface patch: parameter c held fixed
SIDES = ("u0", "u1", "v0", "v1")

_SIDE_NORMAL_REF = {
    "u0": np.array([-1.0, 0.0]),
    "u1": np.array([1.0, 0.0]),
    "v0": np.array([0.0, -1.0]),
    "v1": np.array([0.0, 1.0]),
}


def boundary_param_to_uv(side: str, t: float) -> tuple[float, float]:
    """Map boundary parameter ``t`` to surface coordinates for ``side``."""
    if side == "u0":
        return 0.0, t
    if side == "u1":
        return 1.0, t
    if side == "v0":
        return t, 0.0
    if side == "v1":
        return t, 1.0
    raise ValueError(f"unknown side {side!r}")


@dataclass
class BoundaryEval:
    """Surface evaluation on a boundary side plus curve measure and normal."""

    ev: PatchEval
    uv: tuple[float, float]
    tangent: np.ndarray
    ds: float
    normal: np.ndarray


def eval_boundary(patch: NurbsPatch, side: str, t: float) -> BoundaryEval:
    """Evaluate on a side at boundary parameter ``t`` in [0, 1].

    ``normal`` is the outward unit normal (from the reference outward normal
    pushed through the inverse-transposed Jacobian), ``ds`` the arc-length
    factor with respect to ``t``.
    """
    u, v = boundary_param_to_uv(side, t)
    ev = eval_patch_2d(patch, u, v)
    col = 1 if side in ("u0", "u1") else 0
    tangent = ev.jac[:, col]
    ds = float(np.linalg.norm(tangent))
    nref = _SIDE_NORMAL_REF[side]
    # Nanson-style push forward: n ~ J^{-T} n_ref
    jinv_t = np.linalg.inv(ev.jac).T
    nvec = jinv_t @ nref
    nrm = np.linalg.norm(nvec)
    if nrm < 1e-14:
        raise GeometryError(f"degenerate boundary normal on side {side} at t={t}")
    return BoundaryEval(ev, (u, v), tangent, ds, nvec / nrm)


# ---------------------------------------------------------------------------
# Refinement and degree elevation
# ---------------------------------------------------------------------------


def _insert_knot_curve(values: np.ndarray, p: int, Pw: np.ndarray, ubar: float):
    """Single knot insertion on homogeneous control points (Boehm)."""
    k = find_span(values, p, ubar)
    n = Pw.shape[0]
    Q = np.empty((n + 1,) + Pw.shape[1:])
    Q[: k - p + 1] = Pw[: k - p + 1]
    Q[k + 1:] = Pw[k:]
    for i in range(k - p + 1, k + 1):
        denom = values[i + p] - values[i]
        alpha = 0.0 if denom == 0.0 else (ubar - values[i]) / denom
        Q[i] = alpha * Pw[i] + (1.0 - alpha) * Pw[i - 1]
    new_values = np.insert(values, k + 1, ubar)
    return new_values, Q


def _from_homogeneous(Pw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = Pw[..., -1]
    return Pw[..., :-1] / w[..., None], w


def insert_knots(patch: NurbsPatch, direction: str, new_knots) -> NurbsPatch:
    """Insert knots (one multiplicity each) along ``direction`` in {"u", "v"}.

    Geometry and parameterization are preserved exactly.
    """
    Pw = patch.homogeneous()
    if direction == "u":
        values = patch.knots_u.values.copy()
        p = patch.knots_u.degree
        for ub in sorted(new_knots):
            values, Pw = _insert_knot_curve(values, p, Pw, float(ub))
        ku = KnotVector(values, p)
        cp, w = _from_homogeneous(Pw)
        return NurbsPatch(ku, patch.knots_v, cp, w)
    if direction == "v":
        if patch.pdim != 2:
            raise ValueError("no v direction on a curve")
        values = patch.knots_v.values.copy()
        p = patch.knots_v.degree
        Pw_t = np.swapaxes(Pw, 0, 1)
        for ub in sorted(new_knots):
            values, Pw_t = _insert_knot_curve(values, p, Pw_t, float(ub))
        kv = KnotVector(values, p)
        cp, w = _from_homogeneous(np.swapaxes(Pw_t, 0, 1))
        return NurbsPatch(patch.knots_u, kv, cp, w)
    raise ValueError(f"unknown direction {direction!r}")


def _uniform_interior(kv: KnotVector, nsub: int) -> np.ndarray:
    new = []
    for a, b in kv.spans():
        for k in range(1, nsub):
            new.append(a + (b - a) * k / nsub)
    return np.array(new)


def h_refine(patch: NurbsPatch, nsub) -> NurbsPatch:
    """Split every nonzero span into ``nsub`` equal pieces per direction.

    ``nsub`` may be an int or a pair ``(nsub_u, nsub_v)``.  The geometry is
    unchanged (evaluated points agree with the original patch).
    """
    if np.isscalar(nsub):
        nsub = (int(nsub), int(nsub))
    if nsub[0] < 1 or (patch.pdim == 2 and nsub[1] < 1):
        raise ValueError("subdivision counts must be >= 1")
    out = patch
    if nsub[0] > 1:
        out = insert_knots(out, "u", _uniform_interior(out.knots_u, nsub[0]))
    if patch.pdim == 2 and nsub[1] > 1:
        out = insert_knots(out, "v", _uniform_interior(out.knots_v, nsub[1]))
    return out


def _bezier_elevate_curve(values: np.ndarray, p: int, Pw: np.ndarray):
    """One degree elevation of a single-segment (Bezier) homogeneous curve."""
    bp = np.unique(values)
    if len(bp) != 2:
        raise ValueError("degree elevation implemented for single-span (Bezier) patches only")
    n = p + 1
    Q = np.empty((n + 1,) + Pw.shape[1:])
    Q[0] = Pw[0]
    Q[n] = Pw[n - 1]
    for i in range(1, n):
        a = i / (p + 1)
        Q[i] = a * Pw[i - 1] + (1.0 - a) * Pw[i]
    new_values = np.concatenate([np.full(p + 2, bp[0]), np.full(p + 2, bp[1])])
    return new_values, Q


def degree_elevate_bezier(patch: NurbsPatch, direction: str, times: int) -> NurbsPatch:
    """Exact Bezier degree elevation (single-span patches, pre-refinement)."""
    out = patch
    for _ in range(times):
        Pw = out.homogeneous()
        if direction == "u":
            values, Pw = _bezier_elevate_curve(out.knots_u.values, out.knots_u.degree, Pw)
            ku = KnotVector(values, out.knots_u.degree + 1)
            cp, w = _from_homogeneous(Pw)
            out = NurbsPatch(ku, out.knots_v, cp, w)
        elif direction == "v":
            Pw_t = np.swapaxes(Pw, 0, 1)
            values, Pw_t = _bezier_elevate_curve(out.knots_v.values, out.knots_v.degree, Pw_t)
            kv = KnotVector(values, out.knots_v.degree + 1)
            cp, w = _from_homogeneous(np.swapaxes(Pw_t, 0, 1))
            out = NurbsPatch(out.knots_u, kv, cp, w)
        else:
            raise ValueError(f"unknown direction {direction!r}")
    return out


# ---------------------------------------------------------------------------
# Geometry constructors
# ---------------------------------------------------------------------------


def _open_unit_knots(p: int) -> KnotVector:
    return KnotVector(np.concatenate([np.zeros(p + 1), np.ones(p + 1)]), p)


def make_square(length: float, p: int, origin=(0.0, 0.0)) -> NurbsPatch:
    """Axis-aligned square of side ``length`` with an identity-style affine map.

    Built directly at degree ``p`` on the Bernstein grid (linear precision),
    all weights one.
    """
    if length <= 0 or p < 1:
        raise ValueError("need positive side length and degree >= 1")
    kv = _open_unit_knots(p)
    g = np.linspace(0.0, 1.0, p + 1)
    cp = np.empty((p + 1, p + 1, 2))
    cp[:, :, 0] = origin[0] + length * g[:, None]
    cp[:, :, 1] = origin[1] + length * g[None, :]
    return NurbsPatch(kv, kv, cp, np.ones((p + 1, p + 1)))


def make_rectangle(lx: float, ly: float, p: int, origin=(0.0, 0.0)) -> NurbsPatch:
    """Axis-aligned rectangle, degree ``p``, all weights one."""
    if lx <= 0 or ly <= 0 or p < 1:
        raise ValueError("need positive sides and degree >= 1")
    kv = _open_unit_knots(p)
    g = np.linspace(0.0, 1.0, p + 1)
    cp = np.empty((p + 1, p + 1, 2))
    cp[:, :, 0] = origin[0] + lx * g[:, None]
    cp[:, :, 1] = origin[1] + ly * g[None, :]
    return NurbsPatch(kv, kv, cp, np.ones((p + 1, p + 1)))


def make_rod(length: float, p: int, origin: float = 0.0) -> NurbsPatch:
    """1D rod on (origin, origin + length), degree ``p``."""
    if length <= 0 or p < 1:
        raise ValueError("need positive length and degree >= 1")
    kv = _open_unit_knots(p)
    cp = (origin + length * np.linspace(0.0, 1.0, p + 1))[:, None]
    return NurbsPatch(kv, None, cp, np.ones(p + 1))


def make_disk(radius: float, p: int, center=(0.0, 0.0)) -> NurbsPatch:
    """Full disk as the classical 9-control-point biquadratic patch.

    Each parameter-square edge maps to a quarter of the circle (middle arc
    weights sqrt(2)/2); the four parametric corners carry the usual tolerated
    Jacobian degeneracies.  For ``p > 2`` the patch is degree elevated
    exactly before any refinement.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if p < 2:
        raise ValueError("disk construction needs degree >= 2")
    s = math.sqrt(2.0) / 2.0
    r = radius
    cx, cy = center
    cp = np.array([
        [[-s * r, -s * r], [-math.sqrt(2.0) * r, 0.0], [-s * r, s * r]],
        [[0.0, -math.sqrt(2.0) * r], [0.0, 0.0], [0.0, math.sqrt(2.0) * r]],
        [[s * r, -s * r], [math.sqrt(2.0) * r, 0.0], [s * r, s * r]],
    ])
    cp[..., 0] += cx
    cp[..., 1] += cy
    w1 = np.array([1.0, s, 1.0])
    weights = np.outer(w1, w1)
    kv = _open_unit_knots(2)
    patch = NurbsPatch(kv, kv, cp, weights)
    if p > 2:
        patch = degree_elevate_bezier(patch, "u", p - 2)
        patch = degree_elevate_bezier(patch, "v", p - 2)
    return patch


def make_quarter_annulus(r_in: float, r_out: float, p: int, center=(0.0, 0.0)) -> NurbsPatch:
    """Quarter annulus, radial direction u, angular direction v (0..pi/2).

    The circular arcs are exact (middle weight cos(pi/4) = sqrt(2)/2).
    """
    if not (0 < r_in < r_out):
        raise ValueError("need 0 < r_in < r_out")
    if p < 1:
        raise ValueError("degree must be >= 1")
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    radii = np.array([r_in, r_out])
    cp = radii[:, None, None] * arc[None, :, :]
    cp[..., 0] += center[0]
    cp[..., 1] += center[1]
    weights = np.tile(np.array([1.0, math.sqrt(2.0) / 2.0, 1.0]), (2, 1))
    patch = NurbsPatch(_open_unit_knots(1), _open_unit_knots(2), cp, weights)
    if p > 1:
        patch = degree_elevate_bezier(patch, "u", p - 1)
    if p > 2:
        patch = degree_elevate_bezier(patch, "v", p - 2)
    return patch


def make_geometry(kind: str, p: int, **params) -> NurbsPatch:
    """Construct a named geometry at degree ``p``.

    Kinds: ``unit_square(L)``, ``disk(R)``, ``quarter_annulus(r_in, r_out)``,
    ``rod(L)``.  Unsupported (kind, degree) combinations raise ``ValueError``.
    """
    if kind == "unit_square":
        return make_square(params.get("L", 1.0), p, params.get("origin", (0.0, 0.0)))
    if kind == "disk":
        return make_disk(params.get("R", 1.0), p, params.get("center", (0.0, 0.0)))
    if kind == "quarter_annulus":
        return make_quarter_annulus(params["r_in"], params["r_out"], p,
                                    params.get("center", (0.0, 0.0)))
    if kind == "rod":
        return make_rod(params.get("L", 1.0), p, params.get("origin", 0.0))
    raise ValueError(f"unknown geometry kind {kind!r}")


# ---------------------------------------------------------------------------
# Field interpolation helper
# ---------------------------------------------------------------------------


def interpolate_coefficients(patch: NurbsPatch, fn, ncomp: int) -> np.ndarray:
    """Spline coefficients that collocate ``fn`` at the Greville grid.

    Exact whenever ``fn`` restricted to the patch lies in the (rational)
    spline space; used to seed patch tests with polynomial fields.
    Returns an array of shape (n_basis, ncomp).
    """
    if patch.pdim == 1:
        gu = patch.knots_u.greville()
        A = np.zeros((patch.n_u, patch.n_u))
        rhs = np.zeros((patch.n_u, ncomp))
        for r, u in enumerate(gu):
            ev = eval_patch_1d(patch, float(u))
            A[r, ev.indices] = ev.R
            rhs[r] = np.atleast_1d(fn(ev.point[0]))
        return np.linalg.solve(A, rhs)
    gu = patch.knots_u.greville()
    gv = patch.knots_v.greville()
    nb = patch.n_basis
    A = np.zeros((nb, nb))
    rhs = np.zeros((nb, ncomp))
    r = 0
    for i, u in enumerate(gu):
        for j, v in enumerate(gv):
            ev = eval_patch_2d(patch, float(u), float(v))
            A[r, ev.indices] = ev.R
            rhs[r] = np.atleast_1d(fn(ev.point[0], ev.point[1]))
            r += 1
    return np.linalg.solve(A, rhs)


# ---------------------------------------------------------------------------
# Plain-text serialization
# ---------------------------------------------------------------------------


def write_patch_text(patch: NurbsPatch) -> str:
    """Serialize a patch: degrees, knot vectors, weight grid, control grid.

    Grids are written row-major, one grid row per line, decimal values.
    """
    lines = [f"pdim {patch.pdim}", f"dim {patch.dim}"]
    lines.append(f"degree_u {patch.knots_u.degree}")
    lines.append("knots_u " + " ".join(repr(float(x)) for x in patch.knots_u.values))
    if patch.pdim == 2:
        lines.append(f"degree_v {patch.knots_v.degree}")
        lines.append("knots_v " + " ".join(repr(float(x)) for x in patch.knots_v.values))
    lines.append("weights")
    W = patch.weights if patch.pdim == 2 else patch.weights[:, None]
    for row in W:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("points")
    if patch.pdim == 2:
        for row in patch.control_points:
            lines.append(" ".join(repr(float(x)) for x in row.ravel()))
    else:
        for row in patch.control_points:
            lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def parse_patch_text(text: str) -> NurbsPatch:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    head = {}
    i = 0
    while i < len(lines) and lines[i].split()[0] not in ("weights", "points"):
        key, *rest = lines[i].split()
        head[key] = rest
        i += 1
    pdim = int(head["pdim"][0])
    dim = int(head["dim"][0])
    ku = KnotVector(np.array([float(x) for x in head["knots_u"]]), int(head["degree_u"][0]))
    kv = None
    if pdim == 2:
        kv = KnotVector(np.array([float(x) for x in head["knots_v"]]), int(head["degree_v"][0]))
    n_u = ku.n
    n_v = kv.n if kv is not None else 1

    def grab_block(start):
        rows = []
        j = start
        while j < len(lines) and lines[j] not in ("weights", "points"):
            rows.append([float(x) for x in lines[j].split()])
            j += 1
        return np.array(rows), j

    if lines[i] != "weights":
        raise ValueError("malformed patch text: expected weights block")
    W, i = grab_block(i + 1)
    if lines[i] != "points":
        raise ValueError("malformed patch text: expected points block")
    P, i = grab_block(i + 1)
    if pdim == 2:
        weights = W.reshape(n_u, n_v)
        cp = P.reshape(n_u, n_v, dim)
    else:
        weights = W.reshape(n_u)
        cp = P.reshape(n_u, dim)
    return NurbsPatch(ku, kv, cp, weights)


def read_patch_text(path) -> NurbsPatch:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_patch_text(fh.read())
