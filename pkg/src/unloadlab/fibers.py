"""Transmural Laplace field and per-element fiber/sheet/sheet-normal frames.

phi solves Laplace's equation with phi=0 on ENDO nodes and phi=1 on EPI nodes
(natural condition elsewhere). The helix angle interpolates linearly across
the wall and tilts the fiber inside each element's local
(circumferential, longitudinal) plane built from z-hat and grad(phi).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateGradient, MissingLabel, PoleDegeneracy, SolverError
from .meshcore import BASE, ENDO, EPI, TetMesh, tet_volumes


@dataclass(frozen=True)
class FiberField:
    """Per-node transmural coordinate and per-element orthonormal frames.

    frames[e] rows are (a_f, a_s, a_n); right-handed orthonormal.
    """

    phi: np.ndarray          # (N,)
    frames: np.ndarray       # (M, 3, 3)
    theta_endo: float        # degrees
    theta_epi: float


def shape_gradients(mesh: TetMesh):
    """P1 shape-function gradients (M,4,3) and element volumes (M,)."""
    p = mesh.nodes[mesh.tets]
    edge_cols = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # columns are edges
    inv = np.linalg.inv(edge_cols)          # row i is grad(lambda_{i+1})
    g0 = -inv.sum(axis=1, keepdims=True)
    grads = np.concatenate([g0, inv], axis=1)
    vols = tet_volumes(mesh.nodes, mesh.tets)
    return grads, vols


def _label_nodes(mesh: TetMesh, label: str) -> np.ndarray:
    tris = mesh.tris_with_label(label)
    if not len(tris):
        raise MissingLabel(f"mesh has no {label} triangles")
    return np.unique(tris)


def solve_transmural_phi(mesh: TetMesh, rtol: float = 1e-10) -> np.ndarray:
    """P1 FE solution of Laplace with phi=0 on ENDO, phi=1 on EPI."""
    endo = _label_nodes(mesh, ENDO)
    epi = _label_nodes(mesh, EPI)
    n = mesh.num_nodes

    grads, vols = shape_gradients(mesh)
    ke = np.einsum("e,eai,ebi->eab", vols, grads, grads)
    tets = mesh.tets
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    dirichlet = np.zeros(n)
    dirichlet[epi] = 1.0
    dirichlet[endo] = 0.0
    fixed = np.zeros(n, dtype=bool)
    fixed[endo] = True
    fixed[epi] = True
    free = ~fixed

    b = -K[free][:, fixed] @ dirichlet[fixed]
    A = K[free][:, free]
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("stiffness matrix has non-positive diagonal")
    M = sp.diags(1.0 / diag)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=M, maxiter=10 * n)
    if info != 0:
        raise SolverError(f"CG failed to reach rtol={rtol} (info={info})")
    res = np.linalg.norm(A @ x - b)
    if res > max(rtol * np.linalg.norm(b), 1e-14):
        raise SolverError(f"CG residual {res:.2e} above tolerance")

    phi = dirichlet.copy()
    phi[free] = x
    # discrete maximum principle; clip solver-level noise only
    if phi.min() < -1e-6 or phi.max() > 1 + 1e-6:
        raise SolverError("transmural field violates the maximum principle")
    return np.clip(phi, 0.0, 1.0)


def _element_adjacency(tets: np.ndarray):
    """Face-sharing element adjacency lists."""
    m = len(tets)
    opp = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    faces = np.sort(tets[:, opp].reshape(-1, 3), axis=1)
    owner = np.repeat(np.arange(m), 4)
    order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
    faces, owner = faces[order], owner[order]
    adj = [[] for _ in range(m)]
    same = np.all(faces[1:] == faces[:-1], axis=1)
    for i in np.nonzero(same)[0]:
        a, b = owner[i], owner[i + 1]
        adj[a].append(b)
        adj[b].append(a)
    return adj


def assign_fibers(mesh: TetMesh, phi: np.ndarray, theta_endo: float,
                  theta_epi: float) -> FiberField:
    """Per-element frames from the transmural gradient and linear helix angle."""
    grads, _ = shape_gradients(mesh)
    gphi = np.einsum("ea,eai->ei", phi[mesh.tets], grads)
    gnorm = np.linalg.norm(gphi, axis=1)
    if np.any(gnorm < 1e-12):
        raise DegenerateGradient(
            f"vanishing transmural gradient in element {int(gnorm.argmin())}")
    a_n = gphi / gnorm[:, None]

    zhat = np.array([0.0, 0.0, 1.0])
    cvec = np.cross(np.broadcast_to(zhat, a_n.shape), a_n)
    cnorm = np.linalg.norm(cvec, axis=1)
    ok = cnorm >= 1e-8
    e_c = np.zeros_like(a_n)
    e_c[ok] = cvec[ok] / cnorm[ok, None]

    if not np.all(ok):
        _fill_degenerate_ec(mesh, a_n, e_c, ok)

    e_l = np.cross(a_n, e_c)
    xi = phi[mesh.tets].mean(axis=1)
    theta = np.deg2rad(theta_endo + xi * (theta_epi - theta_endo))
    a_f = np.cos(theta)[:, None] * e_c + np.sin(theta)[:, None] * e_l
    a_s = np.cross(a_n, a_f)
    frames = np.stack([a_f, a_s, a_n], axis=1)
    return FiberField(phi=phi, frames=frames, theta_endo=float(theta_endo),
                      theta_epi=float(theta_epi))


def _fill_degenerate_ec(mesh: TetMesh, a_n, e_c, ok):
    """Breadth-first sweep from the base copying a neighbor's circumferential axis."""
    adj = _element_adjacency(mesh.tets)
    m = mesh.num_tets
    base_nodes = set(np.unique(mesh.tris_with_label(BASE)).tolist()) \
        if np.any(mesh.surface_labels == BASE) else set()
    seeds = [e for e in range(m)
             if ok[e] and (not base_nodes or base_nodes & set(mesh.tets[e]))]
    if not seeds:
        seeds = [int(np.argmax(np.linalg.norm(
            np.cross(np.array([0.0, 0.0, 1.0]), a_n), axis=1)))]
    visited = np.zeros(m, dtype=bool)
    resolved = ok.copy()
    queue = deque()
    for s in seeds:
        if not visited[s]:
            visited[s] = True
            queue.append(s)
    order = []
    while queue:
        e = queue.popleft()
        order.append(e)
        for nb in adj[e]:
            if not visited[nb]:
                visited[nb] = True
                queue.append(nb)
    # any disconnected leftovers processed in index order
    order.extend(int(e) for e in np.nonzero(~visited)[0])

    parent_ec = {}
    for e in order:
        if resolved[e]:
            parent_ec[e] = e_c[e]
            continue
        cand = None
        for nb in adj[e]:
            if resolved[nb]:
                proj = e_c[nb] - np.dot(e_c[nb], a_n[e]) * a_n[e]
                nrm = np.linalg.norm(proj)
                if nrm > 1e-10:
                    cand = proj / nrm
                    break
        if cand is None:
            raise PoleDegeneracy(
                f"element {e} has z-parallel transmural axis and no resolved neighbor")
        e_c[e] = cand
        resolved[e] = True


def compute_fiber_field(mesh: TetMesh, theta_endo: float, theta_epi: float,
                        phi: np.ndarray | None = None) -> FiberField:
    """Laplace solve plus frame assignment in one call."""
    if phi is None:
        phi = solve_transmural_phi(mesh)
    return assign_fibers(mesh, phi, theta_endo, theta_epi)


def export_fiber_vtk(mesh: TetMesh, field: FiberField, path: str) -> None:
    """Write phi as point data and the fiber direction as cell vectors."""
    from .meshcore import _write_vtk

    pad = np.zeros((mesh.surface_tris.shape[0], 3))
    vectors = np.concatenate([field.frames[:, 0], pad], axis=0)
    _write_vtk(mesh, path, point_scalars=field.phi, scalar_name="phi",
               cell_vectors=("fiber", vectors))
