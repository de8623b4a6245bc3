"""Tetrahedral mesh container, surface labeling, geometry, and file I/O.

Meshes are immutable after construction; every operation returns a new mesh.
Geometry is in cm, the longitudinal axis is +z, and the base is the plane of
maximal z in generated meshes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousTopology,
    DegenerateMesh,
    IoError,
    MissingLabel,
    ParseError,
    ShapeMismatch,
    TopologyError,
)

ENDO = "ENDO"
EPI = "EPI"
BASE = "BASE"
SURFACE_LABELS = (ENDO, EPI, BASE)

_VTK_LABEL_CODES = {ENDO: 0, EPI: 1, BASE: 2}
_VTK_CODE_LABELS = {v: k for k, v in _VTK_LABEL_CODES.items()}

MAX_NODES = 10**6


@dataclass(frozen=True)
class NormalizationTransform:
    """Centroid shift plus isotropic scale mapping a mesh to zero mean, unit RMS radius."""

    centroid: np.ndarray  # (3,)
    scale: float

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return (coords - self.centroid) / self.scale

    def invert(self, coords: np.ndarray) -> np.ndarray:
        return coords * self.scale + self.centroid


class TetMesh:
    """Immutable tetrahedral mesh with labeled boundary triangles.

    nodes    : (N, 3) float64, cm
    tets     : (M, 4) int64, positive signed volume under right-handed ordering
    surface  : (K, 3) int64 triangles plus a (K,) label array over SURFACE_LABELS
    """

    __slots__ = ("nodes", "tets", "surface_tris", "surface_labels")

    def __init__(self, nodes, tets, surface_tris=None, surface_labels=None,
                 validate: bool = True):
        nodes = np.ascontiguousarray(np.asarray(nodes, dtype=np.float64))
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise TopologyError(f"nodes must be (N,3), got {nodes.shape}")
        tets = np.ascontiguousarray(np.asarray(tets, dtype=np.int64).reshape(-1, 4))
        if surface_tris is None:
            surface_tris = np.zeros((0, 3), dtype=np.int64)
            surface_labels = np.zeros((0,), dtype="<U4")
        surface_tris = np.ascontiguousarray(
            np.asarray(surface_tris, dtype=np.int64).reshape(-1, 3))
        surface_labels = np.asarray(surface_labels, dtype="<U4")
        if surface_labels.shape != (surface_tris.shape[0],):
            raise TopologyError("one label per surface triangle required")

        if validate:
            n = nodes.shape[0]
            if not (1 <= n <= MAX_NODES):
                raise TopologyError(f"node count {n} outside [1, {MAX_NODES}]")
            for arr, what in ((tets, "tet"), (surface_tris, "surface triangle")):
                if arr.size and (arr.min() < 0 or arr.max() >= n):
                    raise TopologyError(f"{what} references a node outside [0, {n})")
            if surface_labels.size and not set(surface_labels).issubset(SURFACE_LABELS):
                bad = sorted(set(surface_labels) - set(SURFACE_LABELS))
                raise TopologyError(f"unknown surface labels {bad}")
            if tets.shape[0]:
                vols = tet_volumes(nodes, tets)
                worst = vols.min()
                if worst <= 0.0:
                    raise TopologyError(
                        f"non-positive tet volume {worst:.3e} at tet {int(vols.argmin())}")

        for arr in (nodes, tets, surface_tris, surface_labels):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "surface_tris", surface_tris)
        object.__setattr__(self, "surface_labels", surface_labels)

    def __setattr__(self, name, value):
        raise AttributeError("TetMesh is immutable")

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]

    def with_nodes(self, nodes: np.ndarray, validate: bool = True) -> "TetMesh":
        """Same connectivity and labels with replaced coordinates."""
        return TetMesh(nodes, self.tets, self.surface_tris, self.surface_labels,
                       validate=validate)

    def tris_with_label(self, label: str) -> np.ndarray:
        return self.surface_tris[self.surface_labels == label]

    def same_connectivity(self, other: "TetMesh") -> bool:
        return (self.num_nodes == other.num_nodes
                and self.tets.shape == other.tets.shape
                and bool(np.array_equal(self.tets, other.tets)))


def tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes det[b-a, c-a, d-a]/6 for each tet."""
    p = nodes[tets]
    e = p[:, 1:] - p[:, :1]
    return np.linalg.det(e) / 6.0


def triangle_areas_normals(nodes: np.ndarray, tris: np.ndarray):
    """Areas and unit normals of (K,3) triangles; normals follow the winding."""
    p = nodes[tris]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norms = np.linalg.norm(cr, axis=1)
    areas = 0.5 * norms
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = cr / norms[:, None]
    return areas, unit


def boundary_faces(mesh: TetMesh) -> np.ndarray:
    """Faces owned by exactly one tet, wound so the normal points out of that tet."""
    # Faces opposite each local vertex; orientation fixed afterwards.
    tets = mesh.tets
    opp = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    faces = tets[:, opp].reshape(-1, 3)   # (4M, 3), face k opposite vertex k
    opposite = tets.reshape(-1)           # (4M,) matching vertex k

    key = np.sort(faces, axis=1)
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    key_sorted = key[order]
    new_group = np.ones(len(key_sorted), dtype=bool)
    new_group[1:] = np.any(key_sorted[1:] != key_sorted[:-1], axis=1)
    group_ids = np.cumsum(new_group) - 1
    counts = np.bincount(group_ids)
    is_boundary = counts[group_ids] == 1
    bidx = order[is_boundary]

    bfaces = faces[bidx].copy()
    bopp = opposite[bidx]
    p = mesh.nodes[bfaces]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    toward_opp = mesh.nodes[bopp] - p[:, 0]
    inward = np.einsum("ij,ij->i", normal, toward_opp) > 0
    bfaces[inward] = bfaces[inward][:, [0, 2, 1]]
    return bfaces


def _face_components(faces: np.ndarray) -> np.ndarray:
    """Connected-component id per face, faces adjacent when sharing an edge."""
    nf = len(faces)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    face_of_edge = np.tile(np.arange(nf), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, face_of_edge = edges[order], face_of_edge[order]
    same = np.all(edges[1:] == edges[:-1], axis=1)

    parent = np.arange(nf)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in np.nonzero(same)[0]:
        ra, rb = find(face_of_edge[i]), find(face_of_edge[i + 1])
        if ra != rb:
            parent[rb] = ra
    roots = np.array([find(i) for i in range(nf)])
    _, comp = np.unique(roots, return_inverse=True)
    return comp


def extract_surfaces(mesh: TetMesh) -> TetMesh:
    """Label the boundary: inner shell ENDO, outer shell EPI, max-z planar rim BASE."""
    if mesh.surface_tris.shape[0]:
        return mesh
    if mesh.num_tets == 0:
        raise AmbiguousTopology("no tets and no labeled surface to work from")
    faces = boundary_faces(mesh)
    if not len(faces):
        raise AmbiguousTopology("mesh has no boundary faces")

    bnodes = np.unique(faces)
    coords = mesh.nodes[bnodes]
    extent = float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))
    tol = 1e-9 * max(1.0, extent)
    z = mesh.nodes[:, 2]
    z_base = z[bnodes].max()
    on_base = np.all(np.abs(z[faces] - z_base) <= tol, axis=1)

    shells = faces[~on_base]
    if not len(shells):
        raise AmbiguousTopology("all boundary faces lie on the basal plane")
    comp = _face_components(shells)
    ncomp = comp.max() + 1
    if ncomp != 2:
        raise AmbiguousTopology(f"expected 2 shell components, found {ncomp}")

    center = mesh.nodes[bnodes].mean(axis=0)
    reach = np.empty(2)
    for c in range(2):
        pts = mesh.nodes[np.unique(shells[comp == c])]
        reach[c] = np.linalg.norm(pts - center, axis=1).max()
    outer = int(np.argmax(reach))

    labels = np.empty(len(faces), dtype="<U4")
    labels[on_base] = BASE
    shell_labels = np.where(comp == outer, EPI, ENDO)
    labels[~on_base] = shell_labels
    return TetMesh(mesh.nodes, mesh.tets, faces, labels)


def _closed_endo_triangles(mesh: TetMesh):
    """ENDO triangles plus a fan closing the basal rim; vertex index -1 = rim centroid.

    Returns (tris, rim_nodes) where tris rows may contain -1 and rim_nodes is the
    sorted unique rim node list (empty when the ENDO surface is already closed).
    """
    endo = mesh.tris_with_label(ENDO)
    if not len(endo):
        raise MissingLabel("mesh has no ENDO-labeled triangles")
    # Reorient from tet ownership when tets exist so windings are consistent.
    if mesh.num_tets:
        faces = boundary_faces(mesh)
        want = {tuple(sorted(t)): tuple(t) for t in faces.tolist()}
        fixed = []
        for t in endo.tolist():
            oriented = want.get(tuple(sorted(t)))
            fixed.append(oriented if oriented is not None else tuple(t))
        endo = np.array(fixed, dtype=np.int64)

    edges = np.concatenate([endo[:, [0, 1]], endo[:, [1, 2]], endo[:, [2, 0]]])
    und = np.sort(edges, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    rim_mask = counts[inv] == 1
    rim_edges = edges[rim_mask]          # directed as traversed by the patch
    if not len(rim_edges):
        return endo, np.zeros(0, dtype=np.int64)
    rim_nodes = np.unique(rim_edges)
    # Fan triangle (v, u, centroid) continues the closed orientation of edge u->v.
    fans = np.column_stack([rim_edges[:, 1], rim_edges[:, 0],
                            np.full(len(rim_edges), -1, dtype=np.int64)])
    return np.concatenate([endo, fans]), rim_nodes


def _signed_volume(points: np.ndarray, tris: np.ndarray, centroid: np.ndarray) -> float:
    p = np.where(tris[:, :, None] >= 0, points[tris], centroid)
    return float(np.einsum("ij,ij->i", np.cross(p[:, 0], p[:, 1]), p[:, 2]).sum() / 6.0)


def cavity_volume(mesh: TetMesh) -> float:
    """Volume enclosed by the ENDO surface closed with its flat basal cap (cm^3)."""
    tris, rim = _closed_endo_triangles(mesh)
    centroid = mesh.nodes[rim].mean(axis=0) if len(rim) else np.zeros(3)
    return abs(_signed_volume(mesh.nodes, tris, centroid))


def total_volume(mesh: TetMesh) -> float:
    """Sum of tet volumes (cm^3)."""
    return float(tet_volumes(mesh.nodes, mesh.tets).sum())


def boundary_enclosed_volume(mesh: TetMesh) -> float:
    """Volume enclosed by the full boundary via the divergence theorem."""
    faces = boundary_faces(mesh)
    p = mesh.nodes[faces]
    return float(np.einsum("ij,ij->i", np.cross(p[:, 0], p[:, 1]), p[:, 2]).sum() / 6.0)


def normalize_coords(mesh: TetMesh):
    """Shift to zero centroid and scale to unit RMS node radius."""
    centroid = mesh.nodes.mean(axis=0)
    centered = mesh.nodes - centroid
    scale = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    if scale < 1e-14:
        raise DegenerateMesh("all nodes coincide; cannot normalize")
    t = NormalizationTransform(centroid=centroid, scale=scale)
    return mesh.with_nodes(centered / scale, validate=False), t


# --- file I/O -----------------------------------------------------------------

FORMAT_NATIVE = "native-json"
FORMAT_VTK = "vtk-legacy-ascii"


def save_mesh(mesh: TetMesh, path: str, format: str = FORMAT_NATIVE) -> None:
    try:
        if format == FORMAT_NATIVE:
            doc = {
                "version": 1,
                "units": "cm",
                "nodes": mesh.nodes.tolist(),
                "tets": mesh.tets.tolist(),
                "surface": [
                    {"tri": tri, "label": lab}
                    for tri, lab in zip(mesh.surface_tris.tolist(),
                                        mesh.surface_labels.tolist())
                ],
            }
            tmp = f"{path}.tmp"
            with open(tmp, "w") as fh:
                json.dump(doc, fh)
            os.replace(tmp, path)
        elif format == FORMAT_VTK:
            _write_vtk(mesh, path)
        else:
            raise IoError(f"unknown mesh format {format!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_mesh(path: str, format: str = FORMAT_NATIVE) -> TetMesh:
    try:
        if format == FORMAT_NATIVE:
            with open(path) as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}: invalid JSON ({exc})") from exc
            try:
                if doc.get("version") != 1:
                    raise ParseError(f"{path}: unsupported format version "
                                     f"{doc.get('version')!r}")
                nodes = doc["nodes"]
                tets = doc["tets"]
                surface = doc.get("surface", [])
                tris = [s["tri"] for s in surface]
                labels = [s["label"] for s in surface]
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}: missing or malformed field ({exc})") from exc
            mesh = TetMesh(nodes, tets,
                           tris if tris else None, labels if tris else None)
        elif format == FORMAT_VTK:
            mesh = _read_vtk(path)
        else:
            raise ParseError(f"unknown mesh format {format!r}")
    except FileNotFoundError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not mesh.surface_tris.shape[0]:
        try:
            mesh = extract_surfaces(mesh)
        except AmbiguousTopology:
            pass   # not a two-shell geometry; leave unlabeled
    return mesh


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_vtk(mesh: TetMesh, path: str, point_scalars=None, scalar_name="error_cm",
               cell_vectors=None):
    lines = ["# vtk DataFile Version 3.0", "unloadlab mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_nodes} double"]
    lines += [" ".join(_fmt(c) for c in row) for row in mesh.nodes]
    ncell = mesh.num_tets + mesh.surface_tris.shape[0]
    size = 5 * mesh.num_tets + 4 * mesh.surface_tris.shape[0]
    lines.append(f"CELLS {ncell} {size}")
    lines += ["4 " + " ".join(map(str, t)) for t in mesh.tets.tolist()]
    lines += ["3 " + " ".join(map(str, t)) for t in mesh.surface_tris.tolist()]
    lines.append(f"CELL_TYPES {ncell}")
    lines += ["10"] * mesh.num_tets + ["5"] * mesh.surface_tris.shape[0]
    lines.append(f"CELL_DATA {ncell}")
    lines.append("SCALARS surface_label int 1")
    lines.append("LOOKUP_TABLE default")
    lines += ["-1"] * mesh.num_tets
    lines += [str(_VTK_LABEL_CODES[lab]) for lab in mesh.surface_labels.tolist()]
    if cell_vectors is not None:
        name, vecs = cell_vectors
        lines.append(f"VECTORS {name} double")
        lines += [" ".join(_fmt(c) for c in row) for row in np.asarray(vecs)]
    if point_scalars is not None:
        lines.append(f"POINT_DATA {mesh.num_nodes}")
        lines.append(f"SCALARS {scalar_name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_fmt(v) for v in np.asarray(point_scalars).ravel()]
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _read_vtk(path: str) -> TetMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def expect(word):
        nonlocal pos
        while pos < len(tokens) and tokens[pos].upper() != word:
            pos += 1
        if pos >= len(tokens):
            raise ParseError(f"{path}: expected {word}")
        pos += 1

    try:
        expect("POINTS")
        n = int(tokens[pos]); pos += 2  # skip dtype
        nodes = np.array(tokens[pos:pos + 3 * n], dtype=np.float64).reshape(n, 3)
        pos += 3 * n
        expect("CELLS")
        ncell = int(tokens[pos]); size = int(tokens[pos + 1]); pos += 2
        cells = []
        for _ in range(ncell):
            k = int(tokens[pos]); pos += 1
            cells.append([int(t) for t in tokens[pos:pos + k]])
            pos += k
        if sum(len(c) + 1 for c in cells) != size:
            raise ParseError(f"{path}: CELLS size mismatch")
        expect("CELL_TYPES")
        pos += 1
        types = [int(t) for t in tokens[pos:pos + ncell]]
        pos += ncell
        codes = None
        if "CELL_DATA" in (t.upper() for t in tokens[pos:]):
            expect("CELL_DATA"); pos += 1
            expect("SCALARS"); pos += 2  # name, dtype
            if pos < len(tokens) and tokens[pos].isdigit():
                pos += 1
            expect("LOOKUP_TABLE"); pos += 1
            codes = [int(float(t)) for t in tokens[pos:pos + ncell]]
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed VTK file ({exc})") from exc

    tets = [c for c, t in zip(cells, types) if t == 10]
    tris = [(c, i) for i, (c, t) in enumerate(zip(cells, types)) if t == 5]
    surface_tris = [c for c, _ in tris]
    labels = None
    if codes is not None and tris:
        labels = []
        for c, i in tris:
            code = codes[i]
            if code not in _VTK_CODE_LABELS:
                raise ParseError(f"{path}: unknown surface_label code {code}")
            labels.append(_VTK_CODE_LABELS[code])
    if not tets:
        raise ParseError(f"{path}: no tetrahedral cells")
    return TetMesh(nodes, tets,
                   surface_tris if labels else None,
                   labels if labels else None)


def export_point_scalars_vtk(mesh: TetMesh, values: np.ndarray, path: str,
                             scalar_name: str = "error_cm") -> None:
    """Write the mesh as legacy VTK with one scalar per node (heatmap export)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.shape[0] != mesh.num_nodes:
        raise ShapeMismatch(f"need {mesh.num_nodes} point scalars, got {values.shape[0]}")
    try:
        _write_vtk(mesh, path, point_scalars=values, scalar_name=scalar_name)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
