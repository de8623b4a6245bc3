"""Forward inflation and inverse unloading for the Fung LV model.

Total-Lagrangian P1 tetrahedra, one-point quadrature (exact for P1), Newton
with backtracking line search on the potential, incremental pressure ramping,
and the backward-displacement fixed point X_{k+1} = X_ED - u(X_k; P) for the
inverse problem. Pressure work is either the reference-configuration (dead)
form or the deformed cavity-volume (follower) form; both derive from a
potential so the tangent is symmetric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constitutive as cst
from .errors import InvertedElement, MissingLabel, NonConvergence, Overflow, TopologyError
from .fibers import FiberField, shape_gradients
from .meshcore import BASE, TetMesh

LOAD_DEAD = "dead"
LOAD_FOLLOWER = "follower"


@dataclass(frozen=True)
class SolverOptions:
    ramp_steps: int = 10
    newton_tol: float = 1e-8        # scaled by C * mean element volume
    max_iters: int = 50
    max_refinements: int = 3
    load_mode: str = LOAD_FOLLOWER
    kappa: float | None = None      # None -> material default 10*C; 0 literal
    line_search_max: int = 30
    fp_tol_cm: float = 1e-4
    fp_max_iters: int = 30

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    converged: bool
    newton_iters: int
    final_residual_norm: float
    pressure_steps: int
    wall_time: float
    mismatch_cm: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundaryConditions:
    fixed_dofs: tuple      # ((node, axis), ...)
    mode: str

    def mask(self, num_nodes: int) -> np.ndarray:
        m = np.zeros(3 * num_nodes, dtype=bool)
        for node, axis in self.fixed_dofs:
            m[3 * node + axis] = True
        return m


def base_longitudinal_bcs(mesh: TetMesh) -> BoundaryConditions:
    """Fix z on all basal nodes, pin one node fully, and kill z-rotation."""
    base_tris = mesh.tris_with_label(BASE)
    if not len(base_tris):
        raise MissingLabel("mesh has no BASE triangles for boundary conditions")
    base_nodes = np.unique(base_tris)
    fixed = [(int(n), 2) for n in base_nodes]
    xy = mesh.nodes[base_nodes][:, :2]
    a_local = int(np.lexsort((xy[:, 1], xy[:, 0]))[0])
    node_a = int(base_nodes[a_local])
    fixed += [(node_a, 0), (node_a, 1)]
    dx = np.abs(mesh.nodes[base_nodes, 0] - mesh.nodes[node_a, 0])
    node_b = int(base_nodes[int(np.argmax(dx))])
    fixed.append((node_b, 1))
    return BoundaryConditions(fixed_dofs=tuple(sorted(set(fixed))),
                              mode="BASE_LONGITUDINAL_PLUS_RIGID")


def material_for(gp, opts: SolverOptions) -> cst.MaterialParams:
    """MaterialParams for a grid point, honoring the kappa override."""
    return cst.MaterialParams(C=gp.C_Pa, kappa_vol=opts.kappa)


def _skew(w: np.ndarray) -> np.ndarray:
    """S with S[i,l] = eps_{ilk} w_k, batched over leading dims."""
    z = np.zeros(w.shape[:-1])
    return np.stack([
        np.stack([z, w[..., 2], -w[..., 1]], axis=-1),
        np.stack([-w[..., 2], z, w[..., 0]], axis=-1),
        np.stack([w[..., 1], -w[..., 0], z], axis=-1),
    ], axis=-2)


class CavityGeometry:
    """Signed cavity volume (ENDO surface + flat basal cap) with derivatives.

    Fan triangles reference the rim centroid, encoded as vertex index -1; the
    centroid is the mean of the rim nodes, so derivatives spread to them with
    weight 1/K. The sign is fixed at the reference configuration.
    """

    _PAIRS = ((0, 1, 2), (1, 2, 0), (2, 0, 1))   # (row role, col role, third)

    def __init__(self, mesh: TetMesh):
        from .meshcore import _closed_endo_triangles

        tris, rim = _closed_endo_triangles(mesh)
        self.tris = tris
        self.rim = rim
        self.n_rim = max(len(rim), 1)
        self.sign = 1.0
        self.sign = 1.0 if self.signed_volume(mesh.nodes) >= 0 else -1.0

    def _resolved(self, x: np.ndarray) -> np.ndarray:
        c = x[self.rim].mean(axis=0) if len(self.rim) else np.zeros(3)
        return np.where(self.tris[:, :, None] >= 0, x[self.tris], c)

    def signed_volume(self, x: np.ndarray) -> float:
        p = self._resolved(x)
        raw = np.einsum("ij,ij->i", np.cross(p[:, 0], p[:, 1]), p[:, 2]).sum() / 6.0
        return self.sign * float(raw)

    def volume(self, x: np.ndarray) -> float:
        return abs(self.signed_volume(x))

    def grad(self, x: np.ndarray) -> np.ndarray:
        """d(signed volume)/dx, shape (N, 3)."""
        p = self._resolved(x)
        g = np.empty_like(p)
        g[:, 0] = np.cross(p[:, 1], p[:, 2])
        g[:, 1] = np.cross(p[:, 2], p[:, 0])
        g[:, 2] = np.cross(p[:, 0], p[:, 1])
        g *= self.sign / 6.0
        out = np.zeros_like(x)
        flat = self.tris.ravel()
        gflat = g.reshape(-1, 3)
        real = flat >= 0
        np.add.at(out, flat[real], gflat[real])
        if len(self.rim):
            spread = gflat[~real].sum(axis=0) / self.n_rim
            out[self.rim] += spread
        return out

    def hessian_triplets(self, x: np.ndarray):
        """COO triplets of d2(signed volume)/dx2 in the 3N dof numbering."""
        p = self._resolved(x)
        rows, cols, vals = [], [], []

        def emit(nodes_r, nodes_c, blocks):
            # nodes_r/nodes_c: (T,), blocks: (T,3,3); also emits the transpose
            # (swapping the index arrays transposes the block placement, so the
            # same values serve both halves)
            r = (3 * nodes_r[:, None, None] + np.arange(3)[None, :, None])
            c = (3 * nodes_c[:, None, None] + np.arange(3)[None, None, :])
            r = np.broadcast_to(r, blocks.shape).ravel()
            c = np.broadcast_to(c, blocks.shape).ravel()
            rows.append(np.concatenate([r, c]))
            cols.append(np.concatenate([c, r]))
            v = blocks.ravel()
            vals.append(np.concatenate([v, v]))

        for rr, cc, third in self._PAIRS:
            blocks = _skew(p[:, third]) * (self.sign / 6.0)
            nr, nc = self.tris[:, rr], self.tris[:, cc]
            both = (nr >= 0) & (nc >= 0)
            if np.any(both):
                emit(nr[both], nc[both], blocks[both])
            cen_c = (nr >= 0) & (nc < 0)
            if np.any(cen_c):
                b = blocks[cen_c] / self.n_rim
                for t in range(b.shape[0]):
                    nodes_r = np.full(len(self.rim), nr[cen_c][t])
                    emit(nodes_r, self.rim, np.broadcast_to(b[t], (len(self.rim), 3, 3)))
            cen_r = (nr < 0) & (nc >= 0)
            if np.any(cen_r):
                b = blocks[cen_r] / self.n_rim
                for t in range(b.shape[0]):
                    nodes_c = np.full(len(self.rim), nc[cen_r][t])
                    emit(self.rim, nodes_c, np.broadcast_to(b[t], (len(self.rim), 3, 3)))

        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


class Assembly:
    """Per-reference-mesh FE workspace: energies, residuals, tangents.

    The tangent sparsity pattern is constant, so the CSR structure and the
    triplet-to-slot scatter map are built once and only the data array is
    refreshed each iteration.
    """

    def __init__(self, mesh: TetMesh, fibers: FiberField,
                 mat: cst.MaterialParams, load_mode: str = LOAD_FOLLOWER,
                 bcs: BoundaryConditions | None = None):
        if load_mode not in (LOAD_DEAD, LOAD_FOLLOWER):
            raise ValueError(f"unknown load mode {load_mode!r}")
        self.mesh = mesh
        self.mat = mat
        self.load_mode = load_mode
        self.frames = fibers.frames
        if self.frames.shape[0] != mesh.num_tets:
            raise ValueError("fiber field does not match the mesh")
        self.grads, self.vols = shape_gradients(mesh)
        self.mean_vol = float(np.mean(self.vols))
        self.tets = mesh.tets
        n = mesh.num_nodes
        self.n_dofs = 3 * n

        dofs = (3 * self.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
        self.krows = np.repeat(dofs, 12, axis=1).ravel()
        self.kcols = np.tile(dofs, (1, 12)).ravel()
        self.fdofs = dofs.ravel()

        self.bcs = bcs
        self.fixed = bcs.mask(n) if bcs is not None else np.zeros(3 * n, dtype=bool)

        self.cavity = CavityGeometry(mesh)
        if load_mode == LOAD_DEAD:
            # reference endo geometry: area-weighted outward (out-of-wall) normals
            tris = self.cavity.tris
            real = np.all(tris >= 0, axis=1)
            endo_tris = tris[real]
            p = mesh.nodes[endo_tris]
            cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            # cavity fan orientation gave sign for *inward* cavity normals; the
            # stored winding is out-of-wall, i.e. the dead-load direction -n.
            self.endo_tris = endo_tris
            self.endo_an0 = 0.5 * cr    # area-weighted normal, reference
        self._init_pattern()

    def rebase(self, mesh: TetMesh):
        """Move to a new reference with identical connectivity and labels."""
        if mesh.tets.shape != self.tets.shape:
            raise ValueError("rebase requires identical connectivity")
        self.mesh = mesh
        self.grads, self.vols = shape_gradients(mesh)
        self.mean_vol = float(np.mean(self.vols))
        if self.load_mode == LOAD_DEAD:
            p = mesh.nodes[self.endo_tris]
            self.endo_an0 = 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def _init_pattern(self):
        """Freeze the CSR sparsity and the triplet -> data-slot scatter map."""
        rows, cols = self.krows, self.kcols
        if self.load_mode == LOAD_FOLLOWER:
            hr, hc, _ = self.cavity.hessian_triplets(self.mesh.nodes)
            rows = np.concatenate([rows, hr])
            cols = np.concatenate([cols, hc])
        fixed_idx = np.nonzero(self.fixed)[0]
        rows = np.concatenate([rows, fixed_idx])
        cols = np.concatenate([cols, fixed_idx])

        order = np.lexsort((cols, rows))
        rs, cs = rows[order], cols[order]
        new = np.ones(len(rs), dtype=bool)
        new[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        slot_sorted = np.cumsum(new) - 1
        nnz = int(slot_sorted[-1]) + 1
        slots = np.empty(len(rows), dtype=np.int64)
        slots[order] = slot_sorted
        urows, ucols = rs[new], cs[new]

        indptr = np.zeros(self.n_dofs + 1, dtype=np.int64)
        np.add.at(indptr, urows + 1, 1)
        self._csr_indptr = np.cumsum(indptr)
        self._csr_indices = ucols.copy()
        self._nnz = nnz
        self._slots = slots
        self._n_fixed = len(fixed_idx)

        # transpose permutation: for a symmetric pattern, sorting slots by
        # (col, row) lists each slot's transposed partner in row-major order
        self._tperm = np.lexsort((urows, ucols))
        self._slot_bc_zero = self.fixed[urows] | self.fixed[ucols]
        self._slot_bc_diag = np.nonzero((urows == ucols) & self.fixed[urows])[0]
        self._slot_diag = np.nonzero(urows == ucols)[0]

        # constant factor of the symmetrized-delta tangent term:
        # W[e,a,J,L] = sum_b B_ab R_bJ R_bL
        self._W_sym = np.einsum("ab,ebJ,ebL->eaJL", self.mat.B,
                                self.frames, self.frames, optimize=True)

    # --- kinematics ---------------------------------------------------------

    def _deformation(self, u: np.ndarray):
        ue = u.reshape(-1, 3)[self.tets]
        F = np.einsum("eai,eaJ->eiJ", ue, self.grads) + np.eye(3)
        J = np.linalg.det(F)
        if np.any(J <= 0.0):
            raise InvertedElement(f"inverted element (min J = {float(J.min()):.3e})")
        return F, J

    def _fiber_strain(self, F: np.ndarray) -> np.ndarray:
        E = 0.5 * (np.einsum("ekI,ekJ->eIJ", F, F) - np.eye(3))
        return np.einsum("eaI,eIJ,ebJ->eab", self.frames, E, self.frames)

    # --- energy -------------------------------------------------------------

    def external_work(self, u: np.ndarray) -> float:
        x = self.mesh.nodes + u.reshape(-1, 3)
        if self.load_mode == LOAD_FOLLOWER:
            return self.cavity.signed_volume(x) - self.cavity.signed_volume(self.mesh.nodes)
        ue = u.reshape(-1, 3)[self.endo_tris]
        ubar = ue.mean(axis=1)
        return float(-np.einsum("ti,ti->", ubar, self.endo_an0))

    def potential(self, u: np.ndarray, P: float) -> float:
        F, J = self._deformation(u)
        E_fib = self._fiber_strain(F)
        W = cst.fung_energy(E_fib, self.mat)
        if self.mat.kappa_vol > 0:
            W = W + 0.5 * self.mat.kappa_vol * (J - 1.0) ** 2
        return float(np.dot(W, self.vols)) - P * self.external_work(u)

    # --- derivatives ---------------------------------------------------------

    def _external_grad(self, u: np.ndarray) -> np.ndarray:
        if self.load_mode == LOAD_FOLLOWER:
            x = self.mesh.nodes + u.reshape(-1, 3)
            return self.cavity.grad(x).ravel()
        out = np.zeros((self.mesh.num_nodes, 3))
        np.add.at(out, self.endo_tris.ravel(),
                  np.repeat(-self.endo_an0 / 3.0, 3, axis=0))
        return out.ravel()

    def _internal_gradient(self, F, S):
        P1 = np.einsum("eiM,eMJ->eiJ", F, S)
        if self.mat.kappa_vol > 0:
            P1 = P1 + cst.volumetric_pk1(F, self.mat.kappa_vol)
        fe = np.einsum("e,eiJ,eaJ->eai", self.vols, P1, self.grads)
        g = np.zeros(self.n_dofs)
        np.add.at(g, self.fdofs, fe.ravel())   # fe already (elem, node, comp)
        return g

    def _state(self, u: np.ndarray):
        F, _ = self._deformation(u)
        E_fib = self._fiber_strain(F)
        S_fib = cst.pk2_stress(E_fib, self.mat)
        S = np.einsum("eai,ebj,eab->eij", self.frames, self.frames, S_fib,
                      optimize=True)
        return F, E_fib, S

    def residual(self, u: np.ndarray, P: float) -> np.ndarray:
        F, _, S = self._state(u)
        g = self._internal_gradient(F, S)
        g -= P * self._external_grad(u)
        g[self.fixed] = 0.0
        return g

    def _tangent_from_state(self, u, P, F, E_fib, S) -> sp.csr_matrix:
        # A = d(PK1)/dF assembled from the closed-form pieces of the Fung law:
        #   2/(C e^Q) * (F S) x (F S)  +  C e^Q * (rotated symmetric-delta term)
        # plus the geometric d(F S)/dF = delta_ik S_JL and the volumetric part.
        ceq = self.mat.C * np.exp(cst.fung_q(E_fib, self.mat))
        P1f = np.einsum("eiM,eMJ->eiJ", F, S)
        A = np.einsum("e,eiJ,ekL->eiJkL", 2.0 / ceq, P1f, P1f)
        v = np.einsum("eiM,eaM->eai", F, self.frames)
        A += 0.5 * np.einsum("e,eai,eak,eaJL->eiJkL", ceq, v, v, self._W_sym,
                             optimize=True)
        X = np.einsum("eai,eaL->eaiL", v, self.frames)
        A += 0.5 * np.einsum("e,ab,eaiL,ebkJ->eiJkL", ceq, self.mat.B, X, X,
                             optimize=True)
        if self.mat.kappa_vol > 0:
            A += cst.volumetric_tangent(F, self.mat.kappa_vol)
        ke = np.einsum("e,eaJ,eiJkL,ebL->eaibk", self.vols, self.grads, A,
                       self.grads, optimize=True)
        geo = np.einsum("e,eaJ,eJL,ebL->eab", self.vols, self.grads, S,
                        self.grads, optimize=True)
        ke += geo[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]

        data = np.zeros(self._nnz)
        nel = len(self.krows)
        np.add.at(data, self._slots[:nel], ke.reshape(-1))
        if self.load_mode == LOAD_FOLLOWER:
            x = self.mesh.nodes + u.reshape(-1, 3)
            _, _, hv = self.cavity.hessian_triplets(x)
            np.add.at(data, self._slots[nel:nel + len(hv)], -P * hv)
        data = 0.5 * (data + data[self._tperm])
        if self._n_fixed:
            diag_scale = max(float(np.abs(data[self._slot_diag]).mean()), 1.0)
            data[self._slot_bc_zero] = 0.0
            data[self._slot_bc_diag] = diag_scale
        return sp.csr_matrix((data, self._csr_indices, self._csr_indptr),
                             shape=(self.n_dofs, self.n_dofs))

    def tangent(self, u: np.ndarray, P: float) -> sp.csr_matrix:
        F, E_fib, S = self._state(u)
        return self._tangent_from_state(u, P, F, E_fib, S)

    def residual_and_tangent(self, u: np.ndarray, P: float):
        F, E_fib, S = self._state(u)
        g = self._internal_gradient(F, S)
        g -= P * self._external_grad(u)
        g[self.fixed] = 0.0
        return g, self._tangent_from_state(u, P, F, E_fib, S)


# --- public ops -------------------------------------------------------------------


def total_potential(mesh_ref: TetMesh, u: np.ndarray, fibers: FiberField,
                    mat: cst.MaterialParams, P: float,
                    load_mode: str = LOAD_FOLLOWER) -> float:
    """Strain energy plus volumetric penalty minus pressure work."""
    asm = Assembly(mesh_ref, fibers, mat, load_mode)
    return asm.potential(np.asarray(u, dtype=np.float64).ravel(), P)


def residual_and_tangent(mesh_ref: TetMesh, u: np.ndarray, fibers: FiberField,
                         mat: cst.MaterialParams, P: float,
                         load_mode: str = LOAD_FOLLOWER,
                         bcs: BoundaryConditions | None = None):
    """Gradient of the potential and the (symmetrized) sparse Hessian."""
    asm = Assembly(mesh_ref, fibers, mat, load_mode, bcs=bcs)
    return asm.residual_and_tangent(np.asarray(u, dtype=np.float64).ravel(), P)


def _newton(asm: Assembly, u: np.ndarray, P: float, tol_abs: float,
            max_iters: int, ls_max: int, step_cap: float):
    """Minimize the potential at fixed pressure; returns (u, iters, rn, ok).

    Newton directions are clipped to step_cap in the max norm before the
    backtracking line search so the exponential material cannot blow up the
    first trial state.
    """
    try:
        energy = asm.potential(u, P)
    except (InvertedElement, Overflow):
        return u, 0, np.inf, False
    iters = 0
    for _ in range(max_iters):
        F, E_fib, S = asm._state(u)
        g = asm._internal_gradient(F, S)
        g -= P * asm._external_grad(u)
        g[asm.fixed] = 0.0
        rn = float(np.abs(g).max())
        if rn <= tol_abs:
            return u, iters, rn, True
        K = asm._tangent_from_state(u, P, F, E_fib, S)
        try:
            d = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(-g)
        except RuntimeError:
            d = None
        gd = float(g @ d) if d is not None and np.all(np.isfinite(d)) else np.nan
        if not np.isfinite(gd) or gd >= 0.0:
            scale = max(float(np.abs(K.diagonal()).max()), 1e-30)
            d = -g / scale
        dmax = float(np.abs(d).max())
        if dmax > step_cap:
            d = d * (step_cap / dmax)
        gd = float(g @ d)
        # sufficient decrease up to the representability floor of the energy;
        # without the allowance the line search stalls once per-step decreases
        # drop below eps*|energy|
        allow = 16.0 * np.finfo(float).eps * max(abs(energy), 1.0)
        step = 1.0
        accepted = False
        for _ in range(ls_max):
            try:
                trial = asm.potential(u + step * d, P)
            except (InvertedElement, Overflow):
                step *= 0.5
                continue
            if trial <= energy + 1e-4 * step * gd + allow:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return u, iters, rn, False
        u = u + step * d
        energy = trial
        iters += 1
    g = asm.residual(u, P)
    rn = float(np.abs(g).max())
    return u, iters, rn, rn <= tol_abs


def inflate(mesh_unloaded: TetMesh, fibers: FiberField, mat: cst.MaterialParams,
            P_target: float, opts: SolverOptions = SolverOptions(),
            u0: np.ndarray | None = None,
            bcs: BoundaryConditions | None = None,
            asm: Assembly | None = None):
    """Newton inflation from the reference to the loaded state at P_target (Pa).

    Returns (mesh_ED, SolveReport). Ramps pressure in equal increments and
    halves a failing increment up to max_refinements times.
    """
    if P_target < 0:
        raise ValueError("P_target must be nonnegative")
    t0 = time.perf_counter()
    if asm is None:
        if bcs is None:
            bcs = base_longitudinal_bcs(mesh_unloaded)
        asm = Assembly(mesh_unloaded, fibers, mat, opts.load_mode, bcs=bcs)
    tol_abs = opts.newton_tol * mat.C * asm.mean_vol
    bbox = mesh_unloaded.nodes.max(axis=0) - mesh_unloaded.nodes.min(axis=0)
    step_cap = 0.05 * float(np.linalg.norm(bbox))

    total_iters = 0
    steps_done = 0

    if u0 is not None:
        u0 = np.asarray(u0, dtype=np.float64).ravel().copy()
        u0[asm.fixed] = 0.0
        u, it, rn, ok = _newton(asm, u0, P_target, tol_abs,
                                opts.max_iters, opts.line_search_max, step_cap)
        total_iters += it
        steps_done += 1
        if ok:
            rep = SolveReport(True, total_iters, rn, steps_done,
                              time.perf_counter() - t0)
            return mesh_unloaded.with_nodes(
                mesh_unloaded.nodes + u.reshape(-1, 3)), rep

    u = np.zeros(asm.n_dofs)
    rn = 0.0
    if P_target == 0.0:
        u, it, rn, ok = _newton(asm, u, 0.0, tol_abs, opts.max_iters,
                                opts.line_search_max, step_cap)
        total_iters += it
        steps_done += 1
        if not ok:
            raise NonConvergence("failed to converge at zero pressure")
    else:
        pending = list(np.linspace(P_target / opts.ramp_steps, P_target,
                                   opts.ramp_steps))
        p_done = 0.0
        refinements = 0
        while pending:
            p_step = pending[0]
            u_try, it, rn, ok = _newton(asm, u, p_step, tol_abs,
                                        opts.max_iters, opts.line_search_max,
                                        step_cap)
            total_iters += it
            steps_done += 1
            if ok:
                u = u_try
                p_done = p_step
                pending.pop(0)
            else:
                refinements += 1
                if refinements > opts.max_refinements:
                    raise NonConvergence(
                        f"pressure step to {p_step:.4g} Pa failed after "
                        f"{opts.max_refinements} ramp refinements "
                        f"(residual {rn:.3e}, tol {tol_abs:.3e})")
                pending.insert(0, 0.5 * (p_done + p_step))

    rep = SolveReport(True, total_iters, rn, steps_done, time.perf_counter() - t0)
    return mesh_unloaded.with_nodes(mesh_unloaded.nodes + u.reshape(-1, 3)), rep


def unload_inverse(mesh_ED: TetMesh, fibers: FiberField, mat: cst.MaterialParams,
                   P: float, opts: SolverOptions = SolverOptions(),
                   bcs: BoundaryConditions | None = None):
    """Backward-displacement fixed point; returns (mesh_unloaded, SolveReport)."""
    t0 = time.perf_counter()
    if bcs is None:
        bcs = base_longitudinal_bcs(mesh_ED)
    X_ed = mesh_ED.nodes
    X = X_ed.copy()
    best = (np.inf, X_ed.copy())
    total_iters = 0
    total_steps = 0
    rn = 0.0
    u_warm = None
    converged = False
    asm = Assembly(mesh_ED, fibers, mat, opts.load_mode, bcs=bcs)
    for _ in range(opts.fp_max_iters):
        try:
            mesh_k = mesh_ED.with_nodes(X)
            asm.rebase(mesh_k)
            reloaded, rep = inflate(mesh_k, fibers, mat, P, opts,
                                    u0=u_warm, bcs=bcs, asm=asm)
        except (NonConvergence, InvertedElement, Overflow, TopologyError):
            break
        total_iters += rep.newton_iters
        total_steps += rep.pressure_steps
        rn = rep.final_residual_norm
        mismatch = float(np.linalg.norm(reloaded.nodes - X_ed, axis=1).max())
        if mismatch < best[0]:
            best = (mismatch, X.copy())
        if mismatch <= opts.fp_tol_cm:
            converged = True
            break
        u_k = reloaded.nodes - X
        X = X_ed - u_k
        u_warm = u_k.ravel()

    mismatch, X_best = best
    report = SolveReport(converged, total_iters, rn, total_steps,
                         time.perf_counter() - t0,
                         mismatch_cm=None if np.isinf(mismatch) else mismatch)
    return mesh_ED.with_nodes(X_best, validate=False), report


def make_pair(mesh_ED_seed: TetMesh, fibers: FiberField, mat: cst.MaterialParams,
              P: float, opts: SolverOptions = SolverOptions()):
    """Unload the seed, then reload cold to define the training pair.

    Returns (mesh_unloaded, mesh_ED, inverse_report, forward_report). The
    reload runs without warm start so any later inflate of the stored
    unloaded mesh reproduces the stored ED mesh deterministically.
    """
    bcs = base_longitudinal_bcs(mesh_ED_seed)
    mesh_u, rep_inv = unload_inverse(mesh_ED_seed, fibers, mat, P, opts, bcs=bcs)
    if not rep_inv.converged:
        raise NonConvergence(
            f"inverse unloading stalled at mismatch {rep_inv.mismatch_cm} cm")
    mesh_u = mesh_ED_seed.with_nodes(mesh_u.nodes)   # validate the final iterate
    mesh_ed, rep_fwd = inflate(mesh_u, fibers, mat, P, opts, bcs=bcs)
    return mesh_u, mesh_ed, rep_inv, rep_fwd
