"""Multi-patch models: materials, boundary tagging, elements, quadrature.

A model is a list of patches with materials plus declarative boundary tags
and interface specifications.  Construction is single-threaded; afterwards
every query here is read-only.  Interfaces between patches are resolved into
merged quadrature rules that respect the element boundaries of both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .splines import (
    NurbsPatch,
    GeometryError,
    eval_boundary,
    eval_patch_1d,
    eval_patch_2d,
    boundary_param_to_uv,
)

__all__ = [
    "Material",
    "BoundaryTag",
    "InterfaceSpec",
    "MultiPatchModel",
    "QuadratureRule",
    "DofMap",
    "Element",
    "gauss_rule",
    "enumerate_elements",
    "global_dof_map",
    "boundary_quadrature",
    "interface_quadrature",
    "InterfaceQP",
    "invert_boundary_point",
]


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------

_MODES = ("plane_stress", "plane_strain", "kirchhoff_plate", "rod")


@dataclass(frozen=True)
class Material:
    """Isotropic material with an analysis mode.

    ``thickness`` is required for plates; ``E`` doubles as the axial modulus
    for rods (area-normalized).
    """

    E: float
    nu: float = 0.0
    mode: str = "plane_stress"
    thickness: float | None = None

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.mode not in _MODES:
            raise ValueError(f"unknown material mode {self.mode!r}")
        if self.mode == "kirchhoff_plate" and (self.thickness is None or self.thickness <= 0):
            raise ValueError("plates need a positive thickness")

    @property
    def D(self) -> float:
        """Flexural rigidity E t^3 / (12 (1 - nu^2)) for plates."""
        if self.mode != "kirchhoff_plate":
            raise ValueError("flexural rigidity only defined for plates")
        return self.E * self.thickness**3 / (12.0 * (1.0 - self.nu**2))

    def plane_matrix(self) -> np.ndarray:
        """Hooke matrix in Voigt form, strain (eps_xx, eps_yy, gamma_xy)."""
        E, nu = self.E, self.nu
        if self.mode == "plane_stress":
            c = E / (1.0 - nu * nu)
            return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])
        if self.mode == "plane_strain":
            c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
            return c * np.array([
                [1.0 - nu, nu, 0.0],
                [nu, 1.0 - nu, 0.0],
                [0.0, 0.0, (1.0 - 2.0 * nu) / 2.0],
            ])
        raise ValueError(f"no plane constitutive matrix for mode {self.mode!r}")

    def bending_matrix(self) -> np.ndarray:
        """Plate bending matrix for curvature (w_xx, w_yy, 2 w_xy)."""
        nu = self.nu
        return self.D * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])


# ---------------------------------------------------------------------------
# Tags and interfaces
# ---------------------------------------------------------------------------

TAG_KINDS = ("dirichlet", "neumann", "symmetry_rotation", "contact", "free")


@dataclass
class BoundaryTag:
    """Condition attached to (patch, side, parameter range).

    ``data`` is a closed-form function of physical coordinates evaluated at
    quadrature points (vector for dirichlet/neumann, scalar rotation for
    symmetry).  ``components`` restricts a dirichlet tag to "all" or the
    "normal" component (sliding supports).
    """

    patch: int
    side: str
    kind: str
    data: object = None
    components: str = "all"
    trange: tuple[float, float] = (0.0, 1.0)
    surface_id: str | None = None

    def __post_init__(self):
        if self.kind not in TAG_KINDS:
            raise ValueError(f"unknown tag kind {self.kind!r}")
        a, b = self.trange
        if not (0.0 <= a < b <= 1.0):
            raise ValueError("trange must satisfy 0 <= a < b <= 1")


@dataclass
class InterfaceSpec:
    """Coincident boundary pair between two patches.

    Side 1 carries the interface orientation; ``n2 = -n1`` holds pointwise on
    coincident interfaces and is checked when quadrature is built.
    """

    patch_1: int
    side_1: str
    patch_2: int
    side_2: str


@dataclass
class MultiPatchModel:
    """Patches with materials plus boundary tags and interfaces."""

    patches: list
    materials: list
    tags: list = field(default_factory=list)
    interfaces: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.patches) != len(self.materials):
            raise ValueError("one material per patch required")

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def patch(self, i: int) -> NurbsPatch:
        return self.patches[i]

    def material(self, i: int) -> Material:
        return self.materials[i]

    def tags_of_kind(self, kind: str) -> list:
        return [t for t in self.tags if t.kind == kind]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Reference rule on [-1, 1]; exactness degree 2n-1 for n-point Gauss."""

    points: np.ndarray
    weights: np.ndarray

    def mapped(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights mapped to the interval [a, b]."""
        half = 0.5 * (b - a)
        return a + half * (self.points + 1.0), half * self.weights


def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points on [-1, 1]."""
    if not (1 <= n <= 16):
        raise ValueError("point count must be in 1..16")
    q, w = leggauss(n)
    return QuadratureRule(q, w)


# ---------------------------------------------------------------------------
# Elements and DoF map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Element:
    """Nonzero knot span of one patch with its parameter bounds."""

    patch: int
    index: int
    bounds: tuple  # (u0, u1) or (u0, u1, v0, v1)


def enumerate_elements(model: MultiPatchModel) -> list[list[Element]]:
    """Per-patch element lists covering the parameter domain without overlap."""
    out = []
    for pi, patch in enumerate(model.patches):
        spans = patch.element_spans()
        out.append([Element(pi, k, tuple(b)) for k, b in enumerate(spans)])
    return out


@dataclass(frozen=True)
class DofMap:
    """Global indexing: (patch, local basis index, component) -> int.

    Patches get disjoint contiguous ranges; components interleave fastest.
    Patches are never merged, coupling is always weak.
    """

    offsets: tuple
    counts: tuple
    ncomp: int

    @property
    def ndof(self) -> int:
        return self.offsets[-1]

    def index(self, patch: int, a: int, comp: int = 0) -> int:
        return self.offsets[patch] + a * self.ncomp + comp

    def element_dofs(self, patch: int, basis_indices: np.ndarray) -> np.ndarray:
        """All components for the given basis functions, interleaved."""
        base = self.offsets[patch] + basis_indices * self.ncomp
        return (base[:, None] + np.arange(self.ncomp)[None, :]).ravel()

    def patch_slice(self, patch: int) -> slice:
        return slice(self.offsets[patch], self.offsets[patch] + self.counts[patch] * self.ncomp)


def global_dof_map(model: MultiPatchModel, ncomp: int) -> DofMap:
    counts = tuple(p.n_basis for p in model.patches)
    offsets = [0]
    for c in counts:
        offsets.append(offsets[-1] + c * ncomp)
    return DofMap(tuple(offsets), counts, ncomp)


# ---------------------------------------------------------------------------
# Boundary quadrature
# ---------------------------------------------------------------------------


def boundary_quadrature(patch: NurbsPatch, side: str, n: int,
                        trange: tuple[float, float] = (0.0, 1.0)):
    """Quadrature along one side: yields (t, BoundaryEval, weight).

    The side is segmented at its own knot breakpoints restricted to
    ``trange``; ``n`` Gauss points per segment; ``weight`` includes the
    arc-length factor, so summing ``weight`` gives the physical length.
    """
    kv = patch.knots_v if side in ("u0", "u1") else patch.knots_u
    bps = [t for t in kv.breakpoints() if trange[0] < t < trange[1]]
    pts = np.array([trange[0]] + bps + [trange[1]])
    rule = gauss_rule(n)
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        ts, ws = rule.mapped(a, b)
        for t, w in zip(ts, ws):
            bev = eval_boundary(patch, side, float(t))
            out.append((float(t), bev, float(w * bev.ds)))
    return out


# ---------------------------------------------------------------------------
# Interface quadrature
# ---------------------------------------------------------------------------


def _boundary_point(patch: NurbsPatch, side: str, t: float) -> np.ndarray:
    u, v = boundary_param_to_uv(side, t)
    return eval_patch_2d(patch, u, v).point


def invert_boundary_point(patch: NurbsPatch, side: str, x: np.ndarray,
                          t0: float = 0.5, tol: float = 1e-12, max_iter: int = 60) -> float:
    """Boundary parameter whose image is closest to ``x`` (Newton on the
    stationarity of squared distance, bisection-safeguarded).

    Raises :class:`GeometryError` when the residual distance along the curve
    tangent does not drop below ``tol`` times the curve scale.
    """
    lo, hi = 0.0, 1.0
    t = float(np.clip(t0, lo, hi))
    scale = max(1.0, float(np.linalg.norm(_boundary_point(patch, side, 0.0) -
                                          _boundary_point(patch, side, 1.0))))
    for _ in range(max_iter):
        bev = eval_boundary(patch, side, t)
        r = bev.ev.point - x
        g = float(r @ bev.tangent)
        if abs(g) < tol * scale * max(1.0, bev.ds):
            return t
        # second derivative of the squared distance, fall back to tangent norm
        h = float(bev.tangent @ bev.tangent)
        step = -g / h
        t_new = t + step
        if not (lo - 1e-9 <= t_new <= hi + 1e-9):
            t_new = float(np.clip(t_new, lo, hi))
        if abs(t_new - t) < 1e-16:
            t = t_new
            break
        t = t_new
    bev = eval_boundary(patch, side, t)
    g = float((bev.ev.point - x) @ bev.tangent)
    if abs(g) > 1e-10 * scale * max(1.0, bev.ds):
        raise GeometryError(f"boundary inversion failed near x={x} on side {side}")
    return float(np.clip(t, 0.0, 1.0))


@dataclass
class InterfaceQP:
    """Matched interface quadrature point.

    Carries the boundary parameters of both sides, the physical point, the
    arc-length weight and the side-1 outward unit normal.
    """

    t1: float
    t2: float
    bev1: object
    bev2: object
    x: np.ndarray
    weight: float
    normal: np.ndarray


def interface_quadrature(model: MultiPatchModel, spec: InterfaceSpec, n: int,
                         tol: float = 1e-9) -> list[InterfaceQP]:
    """Merged interface rule across a coincident patch boundary pair.

    The interface is parameterized by side 1; segment boundaries are the
    union of both sides' knot breakpoints (side 2 breakpoints pulled back to
    side-1 parameters by closest-point inversion).  ``n`` Gauss points per
    segment; every point carries exactly-inverted parameters on both sides.
    """
    p1 = model.patch(spec.patch_1)
    p2 = model.patch(spec.patch_2)
    kv1 = p1.knots_v if spec.side_1 in ("u0", "u1") else p1.knots_u
    kv2 = p2.knots_v if spec.side_2 in ("u0", "u1") else p2.knots_u

    breaks = set(float(t) for t in kv1.breakpoints())
    for t2 in kv2.breakpoints():
        x = _boundary_point(p2, spec.side_2, float(t2))
        t1 = invert_boundary_point(p1, spec.side_1, x)
        breaks.add(t1)
    pts = np.array(sorted(breaks))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12])
    pts = pts[keep]

    rule = gauss_rule(n)
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        ts, ws = rule.mapped(float(a), float(b))
        for t, w in zip(ts, ws):
            bev1 = eval_boundary(p1, spec.side_1, float(t))
            t2 = invert_boundary_point(p2, spec.side_2, bev1.ev.point)
            bev2 = eval_boundary(p2, spec.side_2, t2)
            gap = np.linalg.norm(bev2.ev.point - bev1.ev.point)
            if gap > tol * max(1.0, np.abs(bev1.ev.point).max()):
                raise GeometryError(
                    f"interface sides not coincident at t1={t} (gap {gap:.3e})")
            out.append(InterfaceQP(float(t), t2, bev1, bev2, bev1.ev.point,
                                   float(w * bev1.ds), bev1.normal))
    return out


def rod_interface_point(model: MultiPatchModel, left_patch: int, right_patch: int):
    """1D interface: left patch right end meets right patch left end."""
    pl = model.patch(left_patch)
    pr = model.patch(right_patch)
    el = eval_patch_1d(pl, pl.knots_u.end)
    er = eval_patch_1d(pr, pr.knots_u.start)
    if abs(el.point[0] - er.point[0]) > 1e-9 * max(1.0, abs(el.point[0])):
        raise GeometryError("rod patches do not meet")
    return el, er
