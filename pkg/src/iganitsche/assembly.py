"""Element loops and global assembly.

Plane elasticity, Kirchhoff plate bending and 1D rod stiffness/mass forms,
load vectors, stress recovery and error norms.  The global system keeps
triplet lists so that boundary terms can keep mutating it cheaply after the
bulk loop; element contributions are independent and merged serially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import (
    DofMap,
    MultiPatchModel,
    gauss_rule,
    global_dof_map,
    boundary_quadrature,
)
from .splines import eval_patch_1d, eval_patch_2d, eval_scalar_third_derivatives

__all__ = [
    "AssembledSystem",
    "FieldSolution",
    "ReferenceField",
    "assemble_elasticity",
    "assemble_kirchhoff",
    "assemble_load",
    "assemble_stiffness_rod",
    "assemble_mass_rod",
    "compute_stress",
    "error_norms",
    "element_quadrature",
    "strain_matrix",
    "traction_matrix",
    "normal_traction_row",
    "curvature_matrix",
    "moment_nn_row",
    "moment_nt_row",
    "normal_rotation_row",
    "effective_shear_row",
]


class AssembledSystem:
    """Sparse square system assembled from triplets plus a right-hand side.

    ``symmetry_hint`` starts "symmetric" and is demoted by callers that add
    nonsymmetric boundary terms.  ``matrix()`` caches the CSR form and is
    invalidated by any mutation.
    """

    def __init__(self, ndof: int, dof_map: DofMap | None = None):
        self.ndof = ndof
        self.dof_map = dof_map
        self.F = np.zeros(ndof)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self.symmetry_hint = "symmetric"
        self._cache = None

    def add_block(self, rdofs: np.ndarray, cdofs: np.ndarray, block: np.ndarray) -> None:
        r = np.repeat(np.asarray(rdofs, dtype=np.int64), len(cdofs))
        c = np.tile(np.asarray(cdofs, dtype=np.int64), len(rdofs))
        self._rows.append(r)
        self._cols.append(c)
        self._vals.append(np.asarray(block, dtype=float).ravel())
        self._cache = None

    def add_rhs(self, dofs: np.ndarray, vec: np.ndarray) -> None:
        np.add.at(self.F, np.asarray(dofs, dtype=np.int64), np.asarray(vec, dtype=float))

    def mark_nonsymmetric(self) -> None:
        self.symmetry_hint = "nonsymmetric"

    def matrix(self) -> sp.csr_matrix:
        if self._cache is None:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                vals = np.concatenate(self._vals)
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
                vals = np.zeros(0)
            self._cache = sp.coo_matrix((vals, (rows, cols)),
                                        shape=(self.ndof, self.ndof)).tocsr()
        return self._cache

    def copy(self) -> "AssembledSystem":
        out = AssembledSystem(self.ndof, self.dof_map)
        out.F = self.F.copy()
        out._rows = list(self._rows)
        out._cols = list(self._cols)
        out._vals = list(self._vals)
        out.symmetry_hint = self.symmetry_hint
        return out


@dataclass
class FieldSolution:
    """Solution coefficients over a model's global DoF vector."""

    model: MultiPatchModel
    dof_map: DofMap
    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) != self.dof_map.ndof:
            raise ValueError("coefficient length does not match the DoF map")

    def local_coeffs(self, patch: int, indices: np.ndarray) -> np.ndarray:
        """(nbf, ncomp) coefficients of the given patch-local functions."""
        dofs = self.dof_map.element_dofs(patch, indices)
        return self.coefficients[dofs].reshape(len(indices), self.dof_map.ncomp)

    def value(self, patch: int, u: float, v: float | None = None) -> np.ndarray:
        ev = _eval(self.model.patch(patch), u, v)
        return self.local_coeffs(patch, ev.indices).T @ ev.R

    def grad(self, patch: int, u: float, v: float | None = None) -> np.ndarray:
        """(ncomp, sdim) physical gradient."""
        ev = _eval(self.model.patch(patch), u, v)
        c = self.local_coeffs(patch, ev.indices)
        dR = ev.dR if ev.dR.ndim == 2 else ev.dR[:, None]
        return c.T @ dR

    def hess_scalar(self, patch: int, u: float, v: float) -> np.ndarray:
        """(xx, yy, xy) second derivatives of a scalar field."""
        ev = eval_patch_2d(self.model.patch(patch), u, v)
        c = self.local_coeffs(patch, ev.indices)[:, 0]
        return ev.d2R.T @ c


def _eval(patch, u, v):
    if patch.pdim == 1:
        return eval_patch_1d(patch, u)
    return eval_patch_2d(patch, u, v)


@dataclass
class ReferenceField:
    """Closed-form reference solution for error norms.

    ``value(x[, y])`` returns the field, ``grad`` its first derivatives
    ((ncomp, 2) for vectors, (2,) or scalar for scalars), ``hess`` the
    second derivatives (xx, yy, xy) of scalar fields (plates).
    """

    value: object
    grad: object = None
    hess: object = None


# ---------------------------------------------------------------------------
# Operator rows shared with the boundary-term machinery
# ---------------------------------------------------------------------------


def strain_matrix(ev) -> np.ndarray:
    """Voigt strain-displacement matrix (3, 2 nbf), dofs interleaved (x, y)."""
    nbf = len(ev.R)
    B = np.zeros((3, 2 * nbf))
    B[0, 0::2] = ev.dR[:, 0]
    B[1, 1::2] = ev.dR[:, 1]
    B[2, 0::2] = ev.dR[:, 1]
    B[2, 1::2] = ev.dR[:, 0]
    return B


def value_matrix(ev) -> np.ndarray:
    """Vector-value matrix (2, 2 nbf): v = V @ coeffs."""
    nbf = len(ev.R)
    V = np.zeros((2, 2 * nbf))
    V[0, 0::2] = ev.R
    V[1, 1::2] = ev.R
    return V


def traction_matrix(ev, C: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Boundary traction operator sigma(phi) n as a (2, 2 nbf) matrix."""
    n1, n2 = normal
    Nn = np.array([[n1, 0.0, n2], [0.0, n2, n1]])
    return Nn @ (C @ strain_matrix(ev))


def normal_traction_row(ev, C: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Normal contact flux n . sigma(phi) n as a (1, 2 nbf) row."""
    return normal[None, :] @ traction_matrix(ev, C, normal)


def curvature_matrix(ev) -> np.ndarray:
    """Plate curvature rows (w_xx, w_yy, 2 w_xy) as (3, nbf)."""
    return np.stack([ev.d2R[:, 0], ev.d2R[:, 1], 2.0 * ev.d2R[:, 2]])


def moment_nn_row(ev, mat, normal: np.ndarray) -> np.ndarray:
    """Normal bending moment M_nn(phi) with M = -C : hess, shape (1, nbf)."""
    D, nu = mat.D, mat.nu
    n1, n2 = normal
    mxx = D * (ev.d2R[:, 0] + nu * ev.d2R[:, 1])
    myy = D * (ev.d2R[:, 1] + nu * ev.d2R[:, 0])
    mxy = D * (1.0 - nu) * ev.d2R[:, 2]
    return -(mxx * n1 * n1 + 2.0 * mxy * n1 * n2 + myy * n2 * n2)[None, :]


def moment_nt_row(ev, mat, normal: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Twisting moment M_nt(phi) (paper sign M = -C : hess), shape (1, nbf)."""
    D, nu = mat.D, mat.nu
    n1, n2 = normal
    t1, t2 = tangent
    mxx = D * (ev.d2R[:, 0] + nu * ev.d2R[:, 1])
    myy = D * (ev.d2R[:, 1] + nu * ev.d2R[:, 0])
    mxy = D * (1.0 - nu) * ev.d2R[:, 2]
    return -(mxx * n1 * t1 + mxy * (n1 * t2 + n2 * t1) + myy * n2 * t2)[None, :]


def normal_rotation_row(ev, normal: np.ndarray) -> np.ndarray:
    """Rotation trace -(grad phi . n) as a (1, nbf) row."""
    return -(ev.dR @ normal)[None, :]


def effective_shear_row(patch, uv, mat, normal: np.ndarray, tangent: np.ndarray) -> tuple:
    """Effective (Kirchhoff) transverse shear V_n(phi) on a straight edge.

    V_n = div(C:hess) . n + d/dt (C:hess)_nt; needs third derivatives, hence
    restricted to affine rectangle patches.  Returns (indices, row (1, nbf)).
    """
    idx, d3 = eval_scalar_third_derivatives(patch, uv[0], uv[1])
    D, nu = mat.D, mat.nu
    n1, n2 = normal
    t1, t2 = tangent
    # div(C:hess) = D grad(laplacian)
    div_n = D * (n1 * (d3[:, 0] + d3[:, 2]) + n2 * (d3[:, 1] + d3[:, 3]))
    # tangential derivative of (C:hess)_nt
    dx_mnt = D * ((d3[:, 0] + nu * d3[:, 2]) * n1 * t1
                  + (1.0 - nu) * d3[:, 1] * (n1 * t2 + n2 * t1)
                  + (d3[:, 2] + nu * d3[:, 0]) * n2 * t2)
    dy_mnt = D * ((d3[:, 1] + nu * d3[:, 3]) * n1 * t1
                  + (1.0 - nu) * d3[:, 2] * (n1 * t2 + n2 * t1)
                  + (d3[:, 3] + nu * d3[:, 1]) * n2 * t2)
    row = (div_n + t1 * dx_mnt + t2 * dy_mnt)[None, :]
    return idx, row


# ---------------------------------------------------------------------------
# Bulk quadrature loop
# ---------------------------------------------------------------------------


def element_quadrature(patch, bounds, n: int):
    """Tensor Gauss points on one element: yields (u, v, w_param)."""
    rule = gauss_rule(n)
    if patch.pdim == 1:
        a, b = bounds
        us, ws = rule.mapped(a, b)
        for u, w in zip(us, ws):
            yield float(u), None, float(w)
        return
    u0, u1, v0, v1 = bounds
    us, wus = rule.mapped(u0, u1)
    vs, wvs = rule.mapped(v0, v1)
    for u, wu in zip(us, wus):
        for v, wv in zip(vs, wvs):
            yield float(u), float(v), float(wu * wv)


def _nquad(model: MultiPatchModel, override: int | None) -> int:
    if override is not None:
        return override
    pmax = max(max(p.knots_u.degree, p.knots_v.degree if p.pdim == 2 else 0)
               for p in model.patches)
    return pmax + 1


def assemble_elasticity(model: MultiPatchModel, nquad: int | None = None) -> AssembledSystem:
    """Stiffness of the plane elasticity virtual-work form (no boundary terms).

    The unconstrained matrix is symmetric positive semidefinite with the
    rigid-body modes in its kernel.
    """
    dof_map = global_dof_map(model, 2)
    system = AssembledSystem(dof_map.ndof, dof_map)
    for pi, patch in enumerate(model.patches):
        C = model.material(pi).plane_matrix()
        n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
        for bounds in patch.element_spans():
            dofs = None
            Ke = None
            for u, v, w in element_quadrature(patch, bounds, n):
                ev = eval_patch_2d(patch, u, v)
                B = strain_matrix(ev)
                ke = B.T @ (C @ B) * (w * abs(ev.det_jac))
                if Ke is None:
                    dofs = dof_map.element_dofs(pi, ev.indices)
                    Ke = ke
                else:
                    Ke += ke
            system.add_block(dofs, dofs, Ke)
    return system


def assemble_kirchhoff(model: MultiPatchModel, nquad: int | None = None) -> AssembledSystem:
    """Bending stiffness for the scalar deflection of Kirchhoff plates."""
    dof_map = global_dof_map(model, 1)
    system = AssembledSystem(dof_map.ndof, dof_map)
    for pi, patch in enumerate(model.patches):
        if min(patch.knots_u.degree, patch.knots_v.degree) < 2:
            raise ValueError("Kirchhoff bending needs degree >= 2 (C^1 basis)")
        Db = model.material(pi).bending_matrix()
        n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
        for bounds in patch.element_spans():
            dofs = None
            Ke = None
            for u, v, w in element_quadrature(patch, bounds, n):
                ev = eval_patch_2d(patch, u, v)
                Bb = curvature_matrix(ev)
                ke = Bb.T @ (Db @ Bb) * (w * abs(ev.det_jac))
                if Ke is None:
                    dofs = dof_map.element_dofs(pi, ev.indices)
                    Ke = ke
                else:
                    Ke += ke
            system.add_block(dofs, dofs, Ke)
    return system


def assemble_load(model: MultiPatchModel, dof_map: DofMap, body=None,
                  nquad: int | None = None) -> np.ndarray:
    """Load vector: bulk body force/pressure plus tagged Neumann tractions.

    ``body`` maps physical coordinates to an ``ncomp`` vector (or scalar for
    plates); Neumann data comes from the model's "neumann" tags.
    """
    F = np.zeros(dof_map.ndof)
    ncomp = dof_map.ncomp
    if body is not None:
        for pi, patch in enumerate(model.patches):
            n = nquad if nquad is not None else max(
                patch.knots_u.degree, patch.knots_v.degree if patch.pdim == 2 else 0) + 1
            for bounds in patch.element_spans():
                for u, v, w in element_quadrature(patch, bounds, n):
                    ev = _eval(patch, u, v)
                    b = np.atleast_1d(np.asarray(body(*ev.point), dtype=float))
                    dofs = dof_map.element_dofs(pi, ev.indices)
                    contrib = (ev.R[:, None] * b[None, :]).ravel() * (w * abs(ev.det_jac))
                    np.add.at(F, dofs, contrib)
    for tag in model.tags_of_kind("neumann"):
        patch = model.patch(tag.patch)
        n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
        for _, bev, w in boundary_quadrature(patch, tag.side, n, tag.trange):
            t = np.atleast_1d(np.asarray(tag.data(*bev.ev.point), dtype=float))
            dofs = dof_map.element_dofs(tag.patch, bev.ev.indices)
            contrib = (bev.ev.R[:, None] * t[None, :]).ravel() * w
            np.add.at(F, dofs, contrib)
    return F


def assemble_stiffness_rod(model: MultiPatchModel, nquad: int | None = None) -> AssembledSystem:
    """1D stiffness int E u' v' dx over all rod patches."""
    dof_map = global_dof_map(model, 1)
    system = AssembledSystem(dof_map.ndof, dof_map)
    for pi, patch in enumerate(model.patches):
        E = model.material(pi).E
        n = nquad if nquad is not None else patch.knots_u.degree + 1
        for bounds in patch.element_spans():
            dofs, Ke = None, None
            for u, _, w in element_quadrature(patch, bounds, n):
                ev = eval_patch_1d(patch, u)
                ke = E * np.outer(ev.dR, ev.dR) * (w * abs(ev.det_jac))
                if Ke is None:
                    dofs = dof_map.element_dofs(pi, ev.indices)
                    Ke = ke
                else:
                    Ke += ke
            system.add_block(dofs, dofs, Ke)
    return system


def assemble_mass_rod(model: MultiPatchModel, nquad: int | None = None) -> AssembledSystem:
    """1D mass int u v dx (unit density)."""
    dof_map = global_dof_map(model, 1)
    system = AssembledSystem(dof_map.ndof, dof_map)
    for pi, patch in enumerate(model.patches):
        n = nquad if nquad is not None else patch.knots_u.degree + 1
        for bounds in patch.element_spans():
            dofs, Me = None, None
            for u, _, w in element_quadrature(patch, bounds, n):
                ev = eval_patch_1d(patch, u)
                me = np.outer(ev.R, ev.R) * (w * abs(ev.det_jac))
                if Me is None:
                    dofs = dof_map.element_dofs(pi, ev.indices)
                    Me = me
                else:
                    Me += me
            system.add_block(dofs, dofs, Me)
    return system


# ---------------------------------------------------------------------------
# Stress recovery and error norms
# ---------------------------------------------------------------------------


def compute_stress(solution: FieldSolution, patch: int, u: float, v: float) -> np.ndarray:
    """Cauchy stress (sigma_xx, sigma_yy, sigma_xy) or plate moments.

    Plane modes apply Hooke's law to the recovered strains; plates return the
    moment tensor components (M_xx, M_yy, M_xy) with M = -C : hess.
    """
    mat = solution.model.material(patch)
    if mat.mode in ("plane_stress", "plane_strain"):
        g = solution.grad(patch, u, v)
        eps = np.array([g[0, 0], g[1, 1], g[0, 1] + g[1, 0]])
        return mat.plane_matrix() @ eps
    if mat.mode == "kirchhoff_plate":
        h = solution.hess_scalar(patch, u, v)
        D, nu = mat.D, mat.nu
        return -np.array([D * (h[0] + nu * h[1]), D * (h[1] + nu * h[0]),
                          D * (1.0 - nu) * h[2]])
    raise ValueError(f"no stress recovery for mode {mat.mode!r}")


def _energy_density(mat, diff_grad, diff_hess):
    if mat.mode in ("plane_stress", "plane_strain"):
        eps = np.array([diff_grad[0, 0], diff_grad[1, 1], diff_grad[0, 1] + diff_grad[1, 0]])
        return float(eps @ (mat.plane_matrix() @ eps))
    if mat.mode == "kirchhoff_plate":
        kap = np.array([diff_hess[0], diff_hess[1], 2.0 * diff_hess[2]])
        return float(kap @ (mat.bending_matrix() @ kap))
    if mat.mode == "rod":
        return float(mat.E * diff_grad[0, 0] ** 2)
    raise ValueError(f"no energy density for mode {mat.mode!r}")


def error_norms(solution: FieldSolution, ref: ReferenceField,
                nquad: int | None = None) -> tuple[float, float]:
    """Relative L2 and energy-norm errors against a reference closure.

    Quadrature uses p + 2 points per direction by default so integration
    error stays below the discretization error being measured.
    """
    model = solution.model
    num_l2 = den_l2 = num_e = den_e = 0.0
    for pi, patch in enumerate(model.patches):
        mat = model.material(pi)
        p = max(patch.knots_u.degree, patch.knots_v.degree if patch.pdim == 2 else 0)
        n = nquad if nquad is not None else p + 2
        for bounds in patch.element_spans():
            for u, v, w in element_quadrature(patch, bounds, n):
                ev = _eval(patch, u, v)
                dv = w * abs(ev.det_jac)
                c = solution.local_coeffs(pi, ev.indices)
                val_h = c.T @ ev.R
                val_r = np.atleast_1d(np.asarray(ref.value(*ev.point), dtype=float))
                num_l2 += dv * float(((val_h - val_r) ** 2).sum())
                den_l2 += dv * float((val_r ** 2).sum())

                dR = ev.dR if ev.dR.ndim == 2 else ev.dR[:, None]
                grad_h = c.T @ dR
                grad_r = np.atleast_2d(np.asarray(ref.grad(*ev.point), dtype=float)) \
                    if ref.grad is not None else np.zeros_like(grad_h)
                hess_h = hess_r = None
                if mat.mode == "kirchhoff_plate":
                    hess_h = ev.d2R.T @ c[:, 0]
                    hess_r = np.asarray(ref.hess(*ev.point), dtype=float)
                    num_e += dv * _energy_density(mat, None, hess_h - hess_r)
                    den_e += dv * _energy_density(mat, None, hess_r)
                else:
                    num_e += dv * _energy_density(mat, grad_h - grad_r, None)
                    den_e += dv * _energy_density(mat, grad_r, None)
    if den_l2 <= 0.0 or den_e <= 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.sqrt(num_l2 / den_l2)), float(np.sqrt(num_e / den_e))
