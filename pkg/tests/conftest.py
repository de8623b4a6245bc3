import numpy as np
import pytest

from unloadlab import meshcore
from unloadlab.meshcore import TetMesh


def regular_tet_mesh() -> TetMesh:
    nodes = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    return TetMesh(nodes, [[0, 1, 2, 3]])


def two_tet_mesh() -> TetMesh:
    """Two tets sharing a face, boundary labeled by hand for solver tests."""
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.2]],
                     dtype=float)
    tets = [[0, 1, 2, 3], [1, 2, 3, 4]]  # both positive volume
    mesh = TetMesh(nodes, tets)
    faces = meshcore.boundary_faces(mesh)
    # Faces containing node 0 -> ENDO, containing node 4 -> EPI, rest -> BASE.
    labels = []
    for f in faces:
        if 0 in f:
            labels.append(meshcore.ENDO)
        elif 4 in f:
            labels.append(meshcore.EPI)
        else:
            labels.append(meshcore.BASE)
    return TetMesh(nodes, tets, faces, labels)


def slab_mesh(nx=4, ny=3, nz=3, lx=1.0, ly=1.0, lz=1.0) -> TetMesh:
    """Structured box [0,lx]x[0,ly]x[0,lz], ENDO at x=0 and EPI at x=lx."""
    xs = np.linspace(0, lx, nx + 1)
    ys = np.linspace(0, ly, ny + 1)
    zs = np.linspace(0, lz, nz + 1)
    nid = {}
    nodes = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            for k, z in enumerate(zs):
                nid[(i, j, k)] = len(nodes)
                nodes.append((x, y, z))
    tets = []
    # Kuhn split of each cell: 6 tets around the main diagonal.
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for perm in perms:
                    path = [(0, 0, 0)]
                    cur = [0, 0, 0]
                    for axis in perm:
                        cur[axis] += 1
                        path.append(tuple(cur))
                    tet = [nid[(i + a, j + b, k + c)] for a, b, c in path]
                    nodes_arr = np.array([nodes[t] for t in tet])
                    v = np.linalg.det(nodes_arr[1:] - nodes_arr[0])
                    if v < 0:
                        tet[2], tet[3] = tet[3], tet[2]
                    tets.append(tet)
    mesh = TetMesh(np.array(nodes, dtype=float), tets)
    faces = meshcore.boundary_faces(mesh)
    labels = []
    keep = []
    nodes = np.asarray(nodes)
    for f in faces:
        fx = nodes[f][:, 0]
        if np.all(np.abs(fx) < 1e-12):
            keep.append(f)
            labels.append(meshcore.ENDO)
        elif np.all(np.abs(fx - lx) < 1e-12):
            keep.append(f)
            labels.append(meshcore.EPI)
    return TetMesh(nodes, mesh.tets, np.array(keep), labels)


def uv_sphere_surface(n_theta=24, n_phi=48, radius=1.0, hemisphere=False):
    """Triangulated sphere (or open lower hemisphere with rim at z=0).

    Returns (nodes, tris) with consistent winding; apex at z=-radius.
    """
    mu_max = np.pi / 2 if hemisphere else np.pi
    n_rows = n_theta - 1 if not hemisphere else n_theta
    nodes = [(0.0, 0.0, -radius)]
    rows = []
    for i in range(1, n_rows + 1):
        mu = mu_max * i / n_rows
        row = []
        for j in range(n_phi):
            ph = 2 * np.pi * j / n_phi
            row.append(len(nodes))
            nodes.append((radius * np.sin(mu) * np.cos(ph),
                          radius * np.sin(mu) * np.sin(ph),
                          -radius * np.cos(mu)))
        rows.append(row)
    tris = []
    first = rows[0]
    for j in range(n_phi):
        a, b = first[j], first[(j + 1) % n_phi]
        tris.append((0, b, a))
    for r in range(len(rows) - 1):
        lo, hi = rows[r], rows[r + 1]
        for j in range(n_phi):
            a, b = lo[j], lo[(j + 1) % n_phi]
            c, d = hi[j], hi[(j + 1) % n_phi]
            tris.append((a, b, d))
            tris.append((a, d, c))
    if not hemisphere:
        top = len(nodes)
        nodes.append((0.0, 0.0, radius))
        last = rows[-1]
        for j in range(n_phi):
            a, b = last[j], last[(j + 1) % n_phi]
            tris.append((top, a, b))
    return np.array(nodes), np.array(tris)


def spherical_shell_mesh(r_in, r_out, n_theta, n_phi, layers) -> TetMesh:
    """Closed concentric spherical shell with ENDO/EPI labels (no BASE)."""
    L = layers
    radii = np.linspace(r_in, r_out, L + 1)
    south = []
    north = []
    nodes = []
    for r in radii:
        south.append(len(nodes))
        nodes.append((0.0, 0.0, -r))
    for r in radii:
        north.append(len(nodes))
        nodes.append((0.0, 0.0, r))
    ring = {}
    for i in range(1, n_theta):
        mu = np.pi * i / n_theta
        for j in range(n_phi):
            ph = 2 * np.pi * j / n_phi
            for l, r in enumerate(radii):
                ring[(i, j, l)] = len(nodes)
                nodes.append((r * np.sin(mu) * np.cos(ph),
                              r * np.sin(mu) * np.sin(ph),
                              -r * np.cos(mu)))
    nodes = np.array(nodes)

    tets = []
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            jn = (j + 1) % n_phi
            for l in range(L):
                corner = {}
                for di, jj in ((0, j), (1, jn)):
                    for dj, ii in ((0, i), (1, i + 1)):
                        for dl, ll in ((0, l), (1, l + 1)):
                            corner[(dj, di, dl)] = ring[(ii, jj, ll)]
                for perm in perms:
                    path = [(0, 0, 0)]
                    cur = [0, 0, 0]
                    for axis in perm:
                        cur[axis] += 1
                        path.append(tuple(cur))
                    tets.append([corner[s] for s in path])
    for j in range(n_phi):
        jn = (j + 1) % n_phi
        for l in range(L):
            p0, p1 = south[l], south[l + 1]
            a0, a1 = ring[(1, j, l)], ring[(1, j, l + 1)]
            b0, b1 = ring[(1, jn, l)], ring[(1, jn, l + 1)]
            tets += [[p0, a0, b0, b1], [p0, a0, b1, a1], [p0, a1, b1, p1]]
            q0, q1 = north[l], north[l + 1]
            c0, c1 = ring[(n_theta - 1, j, l)], ring[(n_theta - 1, j, l + 1)]
            d0, d1 = ring[(n_theta - 1, jn, l)], ring[(n_theta - 1, jn, l + 1)]
            tets += [[q0, c0, d0, d1], [q0, c0, d1, c1], [q0, c1, d1, q1]]

    tets = np.array(tets)
    vols = np.linalg.det(nodes[tets][:, 1:] - nodes[tets][:, :1]) / 6.0
    flip = vols < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    mesh = TetMesh(nodes, tets)
    faces = meshcore.boundary_faces(mesh)
    r = np.linalg.norm(nodes, axis=1)
    labels = []
    for f in faces:
        if np.all(np.abs(r[f] - r_in) < 1e-9):
            labels.append(meshcore.ENDO)
        elif np.all(np.abs(r[f] - r_out) < 1e-9):
            labels.append(meshcore.EPI)
        else:
            raise AssertionError("boundary face off both spheres")
    return TetMesh(nodes, tets, faces, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
