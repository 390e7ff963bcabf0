"""Frictionless Signorini contact via Nitsche terms.

Biased (rigid obstacle or master-slave) and unbiased two-body variants.  The
contact condition enters through the negative-part projection of

    s = sigma_n(u) - gamma (u_n - g),

active where s < 0 (the tie at exactly zero counts as inactive, so grazing
contact adds no stiffness).  The resulting nonsmooth system is solved by a
semi-smooth Newton iteration whose generalized Jacobian switches per
quadrature point with the Heaviside factor.  A positive stabilization gamma
is mandatory here; the parameter-free choice is not available for contact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem, normal_traction_row, value_matrix
from .linalg import apply_identity_constraints, solve_linear
from .model import MultiPatchModel, boundary_quadrature
from .nitsche import NitscheConfig, PairQP, lambda_max
from .model import invert_boundary_point
from .splines import eval_boundary

__all__ = [
    "ContactError",
    "RigidPlane",
    "ContactQP",
    "ContactSet",
    "ContactState",
    "project_Rminus",
    "projection_derivative",
    "gap_rigid_plane",
    "rigid_contact_pairs",
    "two_body_contact_pairs",
    "unbiased_contact_pairs",
    "resolve_contact_gamma",
    "contact_residual",
    "contact_tangent_triplets",
    "add_theta_flux_term",
    "semismooth_newton",
    "contact_pressure_profile",
    "kkt_residuals",
]


class ContactError(RuntimeError):
    """Contact setup or convergence failure."""


def project_Rminus(x: float) -> float:
    """Projection onto the non-positive reals: min(x, 0)."""
    return x if x < 0.0 else 0.0


def projection_derivative(x: float) -> float:
    """Generalized derivative of the projection: 1 where x < 0, else 0."""
    return 1.0 if x < 0.0 else 0.0


@dataclass(frozen=True)
class RigidPlane:
    """Plane {x : normal . x = offset}; the body lives on the positive side."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        nrm = np.linalg.norm(n)
        if nrm == 0.0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / nrm)


def gap_rigid_plane(plane: RigidPlane, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed gap of an undeformed boundary point and the contact direction.

    ``n1`` points from the body toward the plane; the gap is the distance to
    travel along ``n1`` before touching (non-negative for admissible points).
    """
    g = float(plane.normal @ np.asarray(x, dtype=float) - plane.offset)
    return g, -plane.normal


@dataclass
class ContactQP:
    """Contact sample: scalar flux row T (sigma_n), trace row B (relative
    normal displacement) over ``dofs``, undeformed gap and weight."""

    dofs: np.ndarray
    T: np.ndarray
    B: np.ndarray
    gap: float
    w: float
    x: np.ndarray
    normal: np.ndarray


@dataclass
class ContactSet:
    """A contact surface contribution with its Nitsche parameters."""

    pairs: list
    theta: float
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ContactError("contact needs gamma_0 > 0; the parameter-free "
                               "choice is not permitted here")


@dataclass
class ContactState:
    """Semi-smooth Newton outcome."""

    coefficients: np.ndarray
    active: np.ndarray
    iterations: int
    residual_history: list
    converged: bool


# ---------------------------------------------------------------------------
# Pair construction
# ---------------------------------------------------------------------------


def rigid_contact_pairs(model: MultiPatchModel, dof_map, selection, plane: RigidPlane,
                        nquad: int | None = None) -> list[ContactQP]:
    """Contact samples of tagged sides against a rigid plane."""
    pairs = []
    for item in selection:
        patch_idx, side = item[0], item[1]
        trange = item[2] if len(item) > 2 else (0.0, 1.0)
        patch = model.patch(patch_idx)
        C = model.material(patch_idx).plane_matrix()
        n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
        for _, bev, w in boundary_quadrature(patch, side, n, trange):
            g, n1 = gap_rigid_plane(plane, bev.ev.point)
            T = normal_traction_row(bev.ev, C, n1)
            B = n1[None, :] @ value_matrix(bev.ev)
            dofs = dof_map.element_dofs(patch_idx, bev.ev.indices)
            pairs.append(ContactQP(dofs, T, B, g, w, bev.ev.point, n1))
    return pairs


def _paired_sample(model, dof_map, this, other, bev, w, half: bool):
    """One two-body sample integrated on ``this`` side, paired by closest point."""
    patch_t, side_t = this
    patch_o, side_o = other
    x1 = bev.ev.point
    t2 = invert_boundary_point(model.patch(patch_o), side_o, x1)
    bev2 = eval_boundary(model.patch(patch_o), side_o, t2)
    x2 = bev2.ev.point
    dvec = x2 - x1
    dist = np.linalg.norm(dvec)
    scale = max(1.0, np.abs(x1).max())
    if dist > 1e-9 * scale:
        n1 = dvec / dist
    else:
        n1 = bev.normal
    g = float(dvec @ n1)
    C1 = model.material(patch_t).plane_matrix()
    T1 = normal_traction_row(bev.ev, C1, n1)
    V1 = n1[None, :] @ value_matrix(bev.ev)
    V2 = n1[None, :] @ value_matrix(bev2.ev)
    dofs = np.concatenate([dof_map.element_dofs(patch_t, bev.ev.indices),
                           dof_map.element_dofs(patch_o, bev2.ev.indices)])
    T = np.hstack([T1, np.zeros_like(V2)])
    B = np.hstack([V1, -V2])
    ww = 0.5 * w if half else w
    return ContactQP(dofs, T, B, g, ww, x1, n1)


def two_body_contact_pairs(model: MultiPatchModel, dof_map, slave, master,
                           nquad: int | None = None) -> list[ContactQP]:
    """Biased (master-slave) samples integrated over the slave surface.

    The flux is the slave-side contact pressure; the trace is the relative
    normal displacement written at the slave quadrature points, the master
    value taken at its closest-point projection.
    """
    patch_s, side_s = slave[0], slave[1]
    patch = model.patch(patch_s)
    n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
    pairs = []
    for _, bev, w in boundary_quadrature(patch, side_s, n):
        pairs.append(_paired_sample(model, dof_map, (patch_s, side_s), master, bev, w, False))
    return pairs


def unbiased_contact_pairs(model: MultiPatchModel, dof_map, surface_1, surface_2,
                           nquad: int | None = None) -> list[ContactQP]:
    """Unbiased samples: both surfaces integrated, each with weight one half.

    Swapping ``surface_1`` and ``surface_2`` leaves the formulation unchanged.
    """
    pairs = []
    for this, other in ((surface_1, surface_2), (surface_2, surface_1)):
        patch_t, side_t = this[0], this[1]
        patch = model.patch(patch_t)
        n = nquad if nquad is not None else max(patch.knots_u.degree, patch.knots_v.degree) + 1
        for _, bev, w in boundary_quadrature(patch, side_t, n):
            pairs.append(_paired_sample(model, dof_map, this, other, bev, w, True))
    return pairs


def resolve_contact_gamma(config: NitscheConfig, bulk_system: AssembledSystem,
                          pairs) -> float:
    """Gamma for a contact surface; must end up strictly positive."""
    if config.gamma_policy == "parameter_free":
        raise ContactError("contact needs gamma_0 > 0")
    if config.gamma_policy == "fixed":
        gamma = float(config.gamma_value)
    else:
        qp = [PairQP(q.dofs, q.T, q.B, None, q.w, q.x, q.normal) for q in pairs]
        gamma = config.gamma_value * lambda_max(bulk_system, qp)
    if gamma <= 0.0:
        raise ContactError("contact needs gamma_0 > 0")
    return gamma


# ---------------------------------------------------------------------------
# Residual, tangent, Newton loop
# ---------------------------------------------------------------------------


def add_theta_flux_term(system: AssembledSystem, cset: ContactSet) -> None:
    """Add the linear flux-flux part -theta/gamma <sigma_n(u), sigma_n(v)>."""
    coef = -cset.theta / cset.gamma
    for q in cset.pairs:
        system.add_block(q.dofs, q.dofs, coef * (q.T.T @ q.T) * q.w)
    if cset.theta != 1.0:
        system.mark_nonsymmetric()


def contact_residual(u: np.ndarray, sets: list[ContactSet], force_active=None):
    """Projection part of the residual and the active flags.

    Returns (R_c, active, scale) where R_c collects, per quadrature point,
    (1/gamma) [s]_- (theta sigma_n(v) - gamma v_n) with
    s = sigma_n(u) - gamma (u_n - g); ``scale`` accumulates the absolute
    contributions, bounding the roundoff floor of the residual evaluation.
    ``force_active`` overrides the s < 0 activity test (active-set stepping).
    """
    ndof = len(u)
    R = np.zeros(ndof)
    scale = 0.0
    active = []
    k = 0
    for cset in sets:
        g0 = cset.gamma
        th = cset.theta
        for q in cset.pairs:
            ul = u[q.dofs]
            s = float(q.T @ ul) - g0 * (float(q.B @ ul) - q.gap)
            act = bool(force_active[k]) if force_active is not None else s < 0.0
            active.append(act)
            if act:
                row = (th * q.T - g0 * q.B)[0]
                contrib = (q.w * s / g0) * row
                np.add.at(R, q.dofs, contrib)
                scale += float(np.abs(contrib).sum())
            k += 1
    return R, np.array(active, dtype=bool), scale


def contact_tangent_triplets(sets: list[ContactSet], active: np.ndarray):
    """Generalized Jacobian of the projection part for the given active set."""
    rows, cols, vals = [], [], []
    k = 0
    for cset in sets:
        g0 = cset.gamma
        th = cset.theta
        for q in cset.pairs:
            if active[k]:
                blk = (q.w / g0) * np.outer((th * q.T - g0 * q.B)[0], (q.T - g0 * q.B)[0])
                rows.append(np.repeat(q.dofs, len(q.dofs)))
                cols.append(np.tile(q.dofs, len(q.dofs)))
                vals.append(blk.ravel())
            k += 1
    if not rows:
        return None
    return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def semismooth_newton(base: AssembledSystem, sets: list[ContactSet],
                      tol: float = 1e-9, max_iter: int = 80,
                      u0: np.ndarray | None = None,
                      fixed_dofs=(), first_active: str | None = "all") -> ContactState:
    """Solve the contact problem by semi-smooth Newton.

    ``base`` holds the bulk form, every linear Nitsche term and the loads;
    the linear flux-flux contact term is added here once.  Convergence
    requires the residual to drop below ``tol * ||F||`` (plus the roundoff
    floor of the residual evaluation) with an unchanged active set; the
    iteration count equals the number of linear solves.  Non-convergence
    returns a state with ``converged=False`` and the full residual history
    (expected for the symmetric variant at tiny gamma).

    ``first_active="all"`` treats every contact point as active in the first
    tangent only, so bodies held solely by contact do not start from a
    singular matrix; pass ``None`` to trust the initial iterate.
    """
    work = base.copy()
    for cset in sets:
        add_theta_flux_term(work, cset)
    K = work.matrix()
    absK = abs(K)
    F = work.F
    fixed = np.asarray(list(fixed_dofs), dtype=int)
    norm_f = np.linalg.norm(F)
    if norm_f == 0.0:
        norm_f = 1.0

    u = np.zeros(base.ndof) if u0 is None else np.array(u0, dtype=float)
    if len(fixed):
        u[fixed] = 0.0
    prev_active = None
    history = []
    iters = 0
    eps = np.finfo(float).eps
    for _ in range(max_iter + 1):
        Rc, active, c_scale = contact_residual(u, sets)
        R = K @ u - F + Rc
        if len(fixed):
            R[fixed] = 0.0
        rnorm = float(np.linalg.norm(R))
        history.append(rnorm)
        # residual floor: roundoff of the cancelling contributions in R
        floor = 50.0 * eps * (float(np.linalg.norm(absK @ np.abs(u))) + norm_f + c_scale)
        stable = prev_active is None or np.array_equal(active, prev_active)
        if rnorm <= max(tol * norm_f, floor) and stable:
            return ContactState(u, active, iters, history, True)
        if iters >= max_iter:
            break
        step_active = active
        R_step = R
        if iters == 0 and first_active == "all" and not active.all():
            step_active = np.ones_like(active)
            Rc0, _, _ = contact_residual(u, sets, force_active=step_active)
            R_step = K @ u - F + Rc0
            if len(fixed):
                R_step[fixed] = 0.0
        J = K
        trip = contact_tangent_triplets(sets, step_active)
        if trip is not None:
            J = K + sp.coo_matrix((trip[2], (trip[0], trip[1])), shape=K.shape).tocsr()
        if len(fixed):
            J, rhs = apply_identity_constraints(J, -R_step, fixed)
        else:
            rhs = -R_step
        du = solve_linear(J, rhs)
        u = u + du
        prev_active = active
        iters += 1
    return ContactState(u, active, iters, history, False)


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


def contact_pressure_profile(u: np.ndarray, pairs: list[ContactQP]) -> np.ndarray:
    """Pressure p = -sigma_n at the contact quadrature points.

    Returns rows (x, y, pressure, weight) sorted along the first coordinate;
    summing pressure * weight gives the transmitted normal force.
    """
    rows = []
    for q in pairs:
        p = -float(q.T @ u[q.dofs])
        rows.append((q.x[0], q.x[1], p, q.w))
    rows.sort(key=lambda r: r[0])
    return np.array(rows)


def kkt_residuals(u: np.ndarray, sets: list[ContactSet]) -> dict:
    """Pointwise Karush-Kuhn-Tucker quantities at the contact samples.

    Returns sigma_n, penetration (u_n - g, positive = violation) and the
    complementarity product, one entry per quadrature point.
    """
    sig, pen, comp = [], [], []
    for cset in sets:
        for q in cset.pairs:
            ul = u[q.dofs]
            s_n = float(q.T @ ul)
            un_g = float(q.B @ ul) - q.gap
            sig.append(s_n)
            pen.append(un_g)
            comp.append(s_n * un_g)
    return {"sigma_n": np.array(sig), "penetration": np.array(pen),
            "complementarity": np.array(comp)}
