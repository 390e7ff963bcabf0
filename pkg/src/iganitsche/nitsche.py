"""The theta-indexed family of Nitsche boundary and interface terms.

Every linear condition is expressed through a conjugate pair: a trace
operator B and a flux operator tau, sampled at boundary quadrature points.
The generic accumulation adds

    - <tau(u), B(v)>  - theta <tau(v), B(u)>  + gamma <B(u), B(v)>

to the matrix and the matching data terms to the right-hand side.  theta = 1
gives the symmetric method, theta = -1 the skew-symmetric one, which is
parameter-free (gamma = 0) for linear conditions.  The stabilization value
gamma_0 comes from a generalized eigenvalue problem between the boundary
flux form and the bulk energy, restricted to basis functions supported on
the boundary.

Term assembly mutates the shared system; callers serialize mutations per
system instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (
    AssembledSystem,
    effective_shear_row,
    moment_nn_row,
    moment_nt_row,
    normal_rotation_row,
    traction_matrix,
    value_matrix,
)
from .linalg import generalized_symmetric_eig
from .model import MultiPatchModel, boundary_quadrature, interface_quadrature
from .splines import eval_boundary, eval_patch_1d, eval_patch_2d

__all__ = [
    "NitscheConfig",
    "PairQP",
    "estimate_gamma0",
    "resolve_gamma0",
    "add_dirichlet_terms",
    "add_symmetry_rotation_terms",
    "add_plate_deflection_terms",
    "add_interface_coupling_terms",
    "add_rod_coupling_terms",
    "add_rod_dirichlet_terms",
    "dirichlet_pairs",
    "rotation_pairs",
    "deflection_pairs",
    "plate_corner_pairs",
    "interface_pairs",
    "rod_dirichlet_pairs",
    "rod_interface_pairs",
    "add_linear_pairs",
    "pair_blocks",
    "lambda_max",
]


@dataclass(frozen=True)
class NitscheConfig:
    """A member of the Nitsche family: (theta, gamma policy).

    Policies: "parameter_free" (gamma_h = 0, only valid with theta = -1 and
    linear conditions), "eigen_scaled" (gamma_0 = multiplier * lambda_max,
    default multiplier 2) and "fixed" (explicit gamma_0 value).
    """

    theta: float = -1.0
    gamma_policy: str = "parameter_free"
    gamma_value: float = 2.0

    def __post_init__(self):
        if self.gamma_policy not in ("parameter_free", "eigen_scaled", "fixed"):
            raise ValueError(f"unknown gamma policy {self.gamma_policy!r}")
        if self.gamma_policy == "parameter_free" and self.theta != -1.0:
            raise ValueError("the parameter-free variant requires theta = -1")
        if self.gamma_policy == "eigen_scaled" and self.gamma_value <= 0.0:
            raise ValueError("eigen-scaled multiplier must be positive")

    @classmethod
    def parameter_free(cls) -> "NitscheConfig":
        return cls(-1.0, "parameter_free", 0.0)

    @classmethod
    def eigen_scaled(cls, theta: float = 1.0, multiplier: float = 2.0) -> "NitscheConfig":
        return cls(theta, "eigen_scaled", multiplier)

    @classmethod
    def fixed(cls, theta: float, gamma0: float) -> "NitscheConfig":
        return cls(theta, "fixed", gamma0)

    @classmethod
    def parse(cls, theta: float, gamma: str) -> "NitscheConfig":
        """Parse a CLI-style gamma spec: free | eigen:<m> | fixed:<v>."""
        if gamma == "free":
            return cls.parameter_free()
        if gamma.startswith("eigen"):
            mult = float(gamma.split(":", 1)[1]) if ":" in gamma else 2.0
            return cls(theta, "eigen_scaled", mult)
        if gamma.startswith("fixed:"):
            return cls(theta, "fixed", float(gamma.split(":", 1)[1]))
        raise ValueError(f"cannot parse gamma spec {gamma!r}")


@dataclass
class PairQP:
    """One quadrature sample of a conjugate pair.

    ``T`` and ``B`` are (k, nd) operators over the global dofs ``dofs``;
    ``bbar`` the prescribed trace data; ``w`` the weight including the
    boundary measure (1 for point terms).
    """

    dofs: np.ndarray
    T: np.ndarray
    B: np.ndarray
    bbar: np.ndarray
    w: float
    x: np.ndarray
    normal: np.ndarray | None = None


def _selection(sel):
    out = []
    for item in sel:
        patch, side = item[0], item[1]
        trange = item[2] if len(item) > 2 else (0.0, 1.0)
        out.append((patch, side, trange))
    return out


def _bq(model, patch_idx, side, trange, nquad):
    patch = model.patch(patch_idx)
    if nquad is None:
        nquad = max(patch.knots_u.degree, patch.knots_v.degree) + 1
    return patch, boundary_quadrature(patch, side, nquad, trange)


# ---------------------------------------------------------------------------
# Pair providers
# ---------------------------------------------------------------------------


def dirichlet_pairs(model: MultiPatchModel, dof_map, selection, data=None,
                    components: str = "all", nquad: int | None = None):
    """Displacement/traction pairs on elasticity boundaries.

    ``components="normal"`` restricts the pair to the normal component
    (sliding supports): B(v) = v . n against tau(v) = n . sigma(v) n, with
    scalar data.
    """
    pairs = []
    for patch_idx, side, trange in _selection(selection):
        mat = model.material(patch_idx)
        C = mat.plane_matrix()
        patch, qps = _bq(model, patch_idx, side, trange, nquad)
        for _, bev, w in qps:
            T = traction_matrix(bev.ev, C, bev.normal)
            V = value_matrix(bev.ev)
            if components == "normal":
                T = bev.normal[None, :] @ T
                V = bev.normal[None, :] @ V
                bbar = np.atleast_1d(0.0 if data is None else data(*bev.ev.point))
            else:
                bbar = np.zeros(2) if data is None else \
                    np.asarray(data(*bev.ev.point), dtype=float)
            dofs = dof_map.element_dofs(patch_idx, bev.ev.indices)
            pairs.append(PairQP(dofs, T, V, bbar, w, bev.ev.point, bev.normal))
    return pairs


def rotation_pairs(model: MultiPatchModel, dof_map, selection, data=None,
                   nquad: int | None = None):
    """Rotation/bending-moment pairs for Kirchhoff plates.

    B(v) = -(grad v . n), tau(v) = M_nn(v); data is the prescribed rotation.
    """
    pairs = []
    for patch_idx, side, trange in _selection(selection):
        mat = model.material(patch_idx)
        patch, qps = _bq(model, patch_idx, side, trange, nquad)
        for _, bev, w in qps:
            T = moment_nn_row(bev.ev, mat, bev.normal)
            B = normal_rotation_row(bev.ev, bev.normal)
            bbar = np.atleast_1d(0.0 if data is None else data(*bev.ev.point))
            dofs = dof_map.element_dofs(patch_idx, bev.ev.indices)
            pairs.append(PairQP(dofs, T, B, bbar, w, bev.ev.point, bev.normal))
    return pairs


def deflection_pairs(model: MultiPatchModel, dof_map, selection, data=None,
                     nquad: int | None = None):
    """Deflection/effective-shear pairs for Kirchhoff plates.

    B(v) = v, tau(v) = -V_n(v) with V_n the Kirchhoff shear (third
    derivatives; straight edges of affine rectangle patches only).
    """
    pairs = []
    for patch_idx, side, trange in _selection(selection):
        mat = model.material(patch_idx)
        patch, qps = _bq(model, patch_idx, side, trange, nquad)
        for _, bev, w in qps:
            tvec = bev.tangent / np.linalg.norm(bev.tangent)
            idx, Vn = effective_shear_row(patch, bev.uv, mat, bev.normal, tvec)
            if not np.array_equal(idx, bev.ev.indices):
                raise RuntimeError("basis index mismatch in shear row")
            T = -Vn
            B = bev.ev.R[None, :]
            bbar = np.atleast_1d(0.0 if data is None else data(*bev.ev.point))
            dofs = dof_map.element_dofs(patch_idx, bev.ev.indices)
            pairs.append(PairQP(dofs, T, B, bbar, w, bev.ev.point, bev.normal))
    return pairs


# boundary parameter of each corner on its two adjacent sides, and the sign
# of the counterclockwise tangent relative to increasing side parameter
_CCW_SIGN = {"v0": 1.0, "u1": 1.0, "v1": -1.0, "u0": -1.0}
_CORNER_T = {
    ("u0", "v0"): 0.0, ("u0", "v1"): 1.0,
    ("u1", "v0"): 0.0, ("u1", "v1"): 1.0,
    ("v0", "u0"): 0.0, ("v0", "u1"): 1.0,
    ("v1", "u0"): 0.0, ("v1", "u1"): 1.0,
}


def plate_corner_pairs(model: MultiPatchModel, dof_map, corners, data=None):
    """Corner force pairs completing weak plate deflection conditions.

    ``corners`` lists (patch, side_prev, side_next) with sides meeting at a
    corner, ordered counterclockwise.  The flux is the jump of the twisting
    moment across the corner, the trace is the corner deflection.
    """
    pairs = []
    for patch_idx, side_prev, side_next in corners:
        mat = model.material(patch_idx)
        patch = model.patch(patch_idx)
        rows = []
        for side, other in ((side_prev, side_next), (side_next, side_prev)):
            t_corner = _CORNER_T[(side, other)]
            bev = eval_boundary(patch, side, t_corner)
            tvec = bev.tangent / np.linalg.norm(bev.tangent) * _CCW_SIGN[side]
            rows.append((bev, moment_nt_row(bev.ev, mat, bev.normal, tvec)))
        bev_prev, m_prev = rows[0]
        bev_next, m_next = rows[1]
        if not np.array_equal(bev_prev.ev.indices, bev_next.ev.indices):
            raise RuntimeError("corner evaluations disagree on supports")
        T = m_next - m_prev
        B = bev_prev.ev.R[None, :]
        x = bev_prev.ev.point
        bbar = np.atleast_1d(0.0 if data is None else data(*x))
        dofs = dof_map.element_dofs(patch_idx, bev_prev.ev.indices)
        pairs.append(PairQP(dofs, T, B, bbar, 1.0, x, None))
    return pairs


def interface_pairs(model: MultiPatchModel, dof_map, spec, nquad: int | None = None):
    """Jump/average pairs coupling two patches across a coincident interface.

    B(v) = v1 - v2, tau(v) = (sigma(v1) n1 - sigma(v2) n2) / 2; the merged
    quadrature respects both sides' element boundaries.
    """
    p1 = model.patch(spec.patch_1)
    if nquad is None:
        nquad = max(p1.knots_u.degree, p1.knots_v.degree) + 1
    C1 = model.material(spec.patch_1).plane_matrix()
    C2 = model.material(spec.patch_2).plane_matrix()
    pairs = []
    for q in interface_quadrature(model, spec, nquad):
        ev1, ev2 = q.bev1.ev, q.bev2.ev
        # with n2 = -n1 on coincident sides, -sigma(v2) n2 = +sigma(v2) n1
        T = 0.5 * np.hstack([traction_matrix(ev1, C1, q.normal),
                             traction_matrix(ev2, C2, q.normal)])
        B = np.hstack([value_matrix(ev1), -value_matrix(ev2)])
        dofs = np.concatenate([dof_map.element_dofs(spec.patch_1, ev1.indices),
                               dof_map.element_dofs(spec.patch_2, ev2.indices)])
        pairs.append(PairQP(dofs, T, B, np.zeros(2), q.weight, q.x, q.normal))
    return pairs


def rod_dirichlet_pairs(model: MultiPatchModel, dof_map, selection, data=None):
    """Endpoint value/flux pairs for rods: tau(v) = E v' n at the end."""
    pairs = []
    for patch_idx, end in selection:
        patch = model.patch(patch_idx)
        E = model.material(patch_idx).E
        u = patch.knots_u.start if end == "left" else patch.knots_u.end
        n = -1.0 if end == "left" else 1.0
        ev = eval_patch_1d(patch, u)
        T = (E * n * ev.dR)[None, :]
        B = ev.R[None, :]
        bbar = np.atleast_1d(0.0 if data is None else data(ev.point[0]))
        dofs = dof_map.element_dofs(patch_idx, ev.indices)
        pairs.append(PairQP(dofs, T, B, bbar, 1.0, ev.point, np.array([n])))
    return pairs


def rod_interface_pairs(model: MultiPatchModel, dof_map, left_patch: int, right_patch: int):
    """Point jump/average-flux pair at a 1D interface.

    n = +1 on the left patch: jump u1 - u2, average flux E (u1' + u2') / 2.
    """
    pl, pr = model.patch(left_patch), model.patch(right_patch)
    El, Er = model.material(left_patch).E, model.material(right_patch).E
    evl = eval_patch_1d(pl, pl.knots_u.end)
    evr = eval_patch_1d(pr, pr.knots_u.start)
    if abs(evl.point[0] - evr.point[0]) > 1e-9 * max(1.0, abs(evl.point[0])):
        raise ValueError("rod patches do not meet at a common point")
    T = 0.5 * np.hstack([El * evl.dR, Er * evr.dR])[None, :]
    B = np.hstack([evl.R, -evr.R])[None, :]
    dofs = np.concatenate([dof_map.element_dofs(left_patch, evl.indices),
                           dof_map.element_dofs(right_patch, evr.indices)])
    return [PairQP(dofs, T, B, np.zeros(1), 1.0, evl.point, np.array([1.0]))]


# ---------------------------------------------------------------------------
# Generic accumulation and the stabilization eigenproblem
# ---------------------------------------------------------------------------


def add_linear_pairs(system: AssembledSystem, pairs, theta: float, gamma: float) -> None:
    """Add consistency, adjoint and stabilization terms for linear pairs."""
    for q in pairs:
        Kc = q.B.T @ q.T * q.w
        Ka = q.T.T @ q.B * q.w
        Ks = q.B.T @ q.B * q.w
        system.add_block(q.dofs, q.dofs, -Kc - theta * Ka + gamma * Ks)
        if q.bbar is not None and np.any(q.bbar != 0.0):
            f = (-theta * (q.T.T @ q.bbar) + gamma * (q.B.T @ q.bbar)) * q.w
            system.add_rhs(q.dofs, f)
    if theta != 1.0:
        system.mark_nonsymmetric()


def pair_blocks(pairs, ndof: int):
    """Consistency and stabilization blocks as sparse matrices.

    Returns (C, S) where the full matrix addition equals
    -C - theta C^T + gamma S; used to check symmetry structure.
    """
    rows_c, cols_c, vals_c = [], [], []
    rows_s, cols_s, vals_s = [], [], []
    for q in pairs:
        Kc = q.B.T @ q.T * q.w
        Ks = q.B.T @ q.B * q.w
        r = np.repeat(q.dofs, len(q.dofs))
        c = np.tile(q.dofs, len(q.dofs))
        rows_c.append(r)
        cols_c.append(c)
        vals_c.append(Kc.ravel())
        rows_s.append(r)
        cols_s.append(c)
        vals_s.append(Ks.ravel())
    C = sp.coo_matrix((np.concatenate(vals_c),
                       (np.concatenate(rows_c), np.concatenate(cols_c))),
                      shape=(ndof, ndof)).tocsr()
    S = sp.coo_matrix((np.concatenate(vals_s),
                       (np.concatenate(rows_s), np.concatenate(cols_s))),
                      shape=(ndof, ndof)).tocsr()
    return C, S


def lambda_max(bulk_system: AssembledSystem, pairs, shift_rel: float = 1e-10) -> float:
    """Largest eigenvalue of <tau(u), tau(v)>_Gamma = lambda a(u, v).

    The problem is restricted to basis functions whose support touches the
    boundary (the dofs sampled by the pairs); the bulk block is regularized
    by a relative shift because rigid modes supported at the boundary can
    make it singular (the flux operators annihilate them, so the shift only
    parks those eigenvalues at zero).
    """
    if not pairs:
        raise ValueError("empty boundary selection for the eigenproblem")
    touched = np.unique(np.concatenate([q.dofs for q in pairs]))
    loc = {g: i for i, g in enumerate(touched)}
    m = len(touched)
    Bg = np.zeros((m, m))
    for q in pairs:
        li = np.array([loc[g] for g in q.dofs])
        Bg[np.ix_(li, li)] += q.T.T @ q.T * q.w
    K = bulk_system.matrix()
    A = K[np.ix_(touched, touched)].toarray()
    A = 0.5 * (A + A.T)
    shift = shift_rel * max(np.trace(A) / m, 1e-300)
    w, _ = generalized_symmetric_eig(Bg, A, shift=shift)
    return float(w[-1])


def estimate_gamma0(bulk_system: AssembledSystem, pairs) -> float:
    """Stabilization value gamma_0 = 2 lambda_max for the given boundary."""
    return 2.0 * lambda_max(bulk_system, pairs)


def resolve_gamma0(config: NitscheConfig, bulk_system: AssembledSystem | None,
                   pairs) -> float:
    """Gamma value required by ``config`` (eigen-scaled solves the boundary
    eigenproblem on the bulk form, which must not yet contain Nitsche terms).
    """
    if config.gamma_policy == "parameter_free":
        return 0.0
    if config.gamma_policy == "fixed":
        return float(config.gamma_value)
    if bulk_system is None:
        raise ValueError("eigen-scaled gamma needs the bulk system")
    return config.gamma_value * lambda_max(bulk_system, pairs)


# ---------------------------------------------------------------------------
# Public term-adding operations
# ---------------------------------------------------------------------------


def _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma):
    gamma = gamma0 if gamma0 is not None else \
        resolve_gamma0(config, bulk_for_gamma or system, pairs)
    add_linear_pairs(system, pairs, config.theta, gamma)
    return gamma


def add_dirichlet_terms(system: AssembledSystem, model: MultiPatchModel, selection,
                        data, config: NitscheConfig, gamma0: float | None = None,
                        components: str = "all", nquad: int | None = None,
                        bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Weak displacement conditions on elasticity boundaries.

    Returns the gamma value used.  With an eigen-scaled policy and no
    precomputed ``gamma0`` the eigenproblem runs on ``bulk_for_gamma`` (or on
    ``system`` itself, which must then still be the pure bulk form).
    """
    pairs = dirichlet_pairs(model, system.dof_map, selection, data, components, nquad)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)


def add_symmetry_rotation_terms(system: AssembledSystem, model: MultiPatchModel,
                                selection, data, config: NitscheConfig,
                                gamma0: float | None = None, nquad: int | None = None,
                                bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Weak rotation conditions (prescribed -du/dn) for Kirchhoff plates."""
    pairs = rotation_pairs(model, system.dof_map, selection, data, nquad)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)


def add_plate_deflection_terms(system: AssembledSystem, model: MultiPatchModel,
                               selection, data, config: NitscheConfig,
                               corners=(), gamma0: float | None = None,
                               nquad: int | None = None,
                               bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Weak deflection conditions for Kirchhoff plates.

    Pairs the boundary deflection with the effective shear; ``corners`` adds
    the twisting-moment jump terms at corners interior to the constrained
    boundary, which complete the integration-by-parts identity.
    """
    pairs = deflection_pairs(model, system.dof_map, selection, data, nquad)
    pairs += plate_corner_pairs(model, system.dof_map, corners, data)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)


def add_interface_coupling_terms(system: AssembledSystem, model: MultiPatchModel,
                                 spec, config: NitscheConfig,
                                 gamma0: float | None = None, nquad: int | None = None,
                                 bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Weak displacement continuity across a two-patch interface."""
    pairs = interface_pairs(model, system.dof_map, spec, nquad)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)


def add_rod_coupling_terms(system: AssembledSystem, model: MultiPatchModel,
                           left_patch: int, right_patch: int, config: NitscheConfig,
                           gamma0: float | None = None,
                           bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Point coupling of two rod patches (stiffness only, mass untouched)."""
    pairs = rod_interface_pairs(model, system.dof_map, left_patch, right_patch)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)


def add_rod_dirichlet_terms(system: AssembledSystem, model: MultiPatchModel,
                            selection, data, config: NitscheConfig,
                            gamma0: float | None = None,
                            bulk_for_gamma: AssembledSystem | None = None) -> float:
    """Weak endpoint values for rods."""
    pairs = rod_dirichlet_pairs(model, system.dof_map, selection, data)
    return _resolve_and_add(system, pairs, config, gamma0, bulk_for_gamma)
