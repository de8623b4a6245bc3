"""LV shape family, parameter grid sweep, dataset persistence, and splits.

Shapes are truncated-ellipsoid shells with a base-to-apex wall thickness
profile; a PCA-mode pathway deforms a reference mesh by weighted mode shapes.
The default resolution lands in the 600-1000 node / 1800-2500 tet band.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fesolve, fibers, meshcore
from .errors import (
    IoError,
    MissingModeFile,
    NonConvergence,
    ResolutionError,
    TooFewShapes,
    TopologyError,
    ValueNotInGrid,
)
from .meshcore import BASE, ENDO, EPI, TetMesh

MMHG_TO_PA = 133.322

KIND_ELLIPSOID = "parametric_ellipsoid"
KIND_PCA = "pca_modes"

# Table-style physiological grid: pressures (mmHg), stiffness scale (Pa),
# endo/epi helix angles (deg).
GRID_PRESSURES_MMHG = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
GRID_STIFFNESS_PA = (50.0, 100.0, 150.0, 200.0, 250.0, 300.0)
GRID_THETA_ENDO_DEG = (60.0, 65.0, 70.0)
GRID_THETA_EPI_DEG = (-60.0, -65.0, -70.0)

PARAM_BOUNDS = {
    "P_mmHg": (min(GRID_PRESSURES_MMHG), max(GRID_PRESSURES_MMHG)),
    "C_Pa": (min(GRID_STIFFNESS_PA), max(GRID_STIFFNESS_PA)),
    "theta_endo_deg": (min(GRID_THETA_ENDO_DEG), max(GRID_THETA_ENDO_DEG)),
    "theta_epi_deg": (min(GRID_THETA_EPI_DEG), max(GRID_THETA_EPI_DEG)),
}

# Sampling ranges for the parametric family (cm).
ELLIPSOID_RANGES = {
    "c": (7.0, 9.5),          # endocardial long semi-axis
    "a": (2.0, 3.0),          # endocardial short semi-axes
    "b": (2.0, 3.0),
    "wall_base": (0.8, 1.4),
    "wall_apex": (0.8, 1.4),
    "trunc": (0.25, 0.40),    # basal plane height as a fraction of c
}

NODE_BAND = (600, 1000)
TET_BAND = (1800, 2500)
MAX_ASPECT_RATIO = 20.0


@dataclass(frozen=True)
class GlobalParams:
    """The (P, C, theta_endo, theta_epi) tuple with its [0,1]-normalized form."""

    P_mmHg: float
    C_Pa: float
    theta_endo_deg: float
    theta_epi_deg: float

    @property
    def P_Pa(self) -> float:
        return self.P_mmHg * MMHG_TO_PA

    @property
    def normalized(self) -> np.ndarray:
        vals = (self.P_mmHg, self.C_Pa, self.theta_endo_deg, self.theta_epi_deg)
        out = np.empty(4)
        for i, (v, key) in enumerate(zip(vals, PARAM_BOUNDS)):
            lo, hi = PARAM_BOUNDS[key]
            out[i] = (v - lo) / (hi - lo)
        if np.any(out < -1e-12) or np.any(out > 1 + 1e-12):
            raise ValueNotInGrid(f"params {vals} outside grid bounds")
        return np.clip(out, 0.0, 1.0)

    def as_dict(self) -> dict:
        return {"P_mmHg": self.P_mmHg, "C_Pa": self.C_Pa,
                "theta_endo_deg": self.theta_endo_deg,
                "theta_epi_deg": self.theta_epi_deg}


@dataclass(frozen=True)
class ShapeSpec:
    shape_id: str
    kind: str                      # KIND_ELLIPSOID or KIND_PCA
    params: dict                   # ellipsoid geometry or {"weights": [...]}


@dataclass
class CaseRecord:
    case_id: str
    shape_id: str
    params: GlobalParams
    unloaded_path: str
    ed_path: str
    converged: bool
    solver: dict = field(default_factory=dict)
    split_tags: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"case_id": self.case_id, "shape_id": self.shape_id}
        d.update(self.params.as_dict())
        d.update({"unloaded_path": self.unloaded_path, "ED_path": self.ed_path,
                  "converged": self.converged, "solver": self.solver,
                  "split_tags": self.split_tags})
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CaseRecord":
        params = GlobalParams(d["P_mmHg"], d["C_Pa"], d["theta_endo_deg"],
                              d["theta_epi_deg"])
        return cls(d["case_id"], d["shape_id"], params, d["unloaded_path"],
                   d["ED_path"], d["converged"], d.get("solver", {}),
                   d.get("split_tags", {}))


@dataclass
class DatasetManifest:
    records: list
    grid: dict
    seed: int
    version: int = 1

    def case_ids(self):
        return [r.case_id for r in self.records]


def sample_shapes(n: int, seed: int, kind: str = KIND_ELLIPSOID,
                  mode_file: str | None = None) -> list:
    """Draw n reproducible shape specs."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD05E)))
    specs = []
    if kind == KIND_ELLIPSOID:
        for i in range(n):
            params = {key: float(rng.uniform(lo, hi))
                      for key, (lo, hi) in ELLIPSOID_RANGES.items()}
            specs.append(ShapeSpec(shape_id=f"shape{i:03d}", kind=kind, params=params))
    elif kind == KIND_PCA:
        if mode_file is None:
            raise MissingModeFile("PCA shape sampling requires a mode file")
        _, modes = load_mode_file(mode_file)
        k = len(modes)
        for i in range(n):
            w = np.clip(rng.standard_normal(k), -2.0, 2.0)
            specs.append(ShapeSpec(shape_id=f"shape{i:03d}", kind=kind,
                                   params={"weights": w.tolist()}))
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return specs


def default_shape() -> ShapeSpec:
    mid = {key: 0.5 * (lo + hi) for key, (lo, hi) in ELLIPSOID_RANGES.items()}
    return ShapeSpec(shape_id="default", kind=KIND_ELLIPSOID, params=mid)


def load_mode_file(path: str):
    """Plain-text mode file: blank-line-separated blocks of N x 3 floats.

    First block is the mean shape, remaining blocks are mode displacements.
    """
    try:
        text = open(path).read()
    except OSError as exc:
        raise MissingModeFile(f"cannot read mode file {path}: {exc}") from exc
    blocks = [b for b in text.split("\n\n") if b.strip()]
    arrays = []
    for b in blocks:
        rows = [[float(t) for t in line.split()] for line in b.strip().splitlines()]
        arr = np.array(rows, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise MissingModeFile(f"{path}: blocks must be Nx3")
        arrays.append(arr)
    if len(arrays) < 2:
        raise MissingModeFile(f"{path}: need a mean block plus at least one mode")
    mean, modes = arrays[0], arrays[1:]
    if any(m.shape != mean.shape for m in modes):
        raise MissingModeFile(f"{path}: block shapes disagree")
    return mean, modes


def save_mode_file(path: str, mean: np.ndarray, modes: list) -> None:
    def block(arr):
        return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in arr)

    with open(path, "w") as fh:
        fh.write("\n\n".join([block(mean)] + [block(m) for m in modes]) + "\n")


# --- structured shell meshing ---------------------------------------------------


@dataclass(frozen=True)
class ShellResolution:
    rings: int = 11       # longitudinal rings excluding the pole column
    sectors: int = 19     # circumferential sectors
    layers: int = 2       # transmural element layers


DEFAULT_RESOLUTION = ShellResolution()


def _surface_point(a, b, c, mu, phi):
    return np.array([a * np.sin(mu) * np.cos(phi),
                     b * np.sin(mu) * np.sin(phi),
                     -c * np.cos(mu)])


def build_shell_mesh(spec: ShapeSpec, resolution: ShellResolution = DEFAULT_RESOLUTION,
                     enforce_bands: bool = True,
                     ref_mesh: TetMesh | None = None,
                     mode_file: str | None = None) -> TetMesh:
    """Tetrahedralize the shape as a truncated ellipsoid shell (or PCA deform)."""
    if spec.kind == KIND_PCA:
        if mode_file is None:
            raise MissingModeFile("PCA shapes need the mode file at meshing time")
        mean, modes = load_mode_file(mode_file)
        if ref_mesh is None:
            raise MissingModeFile("PCA shapes need a reference mesh for connectivity")
        if mean.shape[0] != ref_mesh.num_nodes:
            raise MissingModeFile("mode file node count does not match reference mesh")
        w = np.asarray(spec.params["weights"], dtype=np.float64)
        coords = mean + sum(wi * mi for wi, mi in zip(w, modes))
        return ref_mesh.with_nodes(coords)

    p = spec.params
    a, b, c = p["a"], p["b"], p["c"]
    t_base, t_apex = p["wall_base"], p["wall_apex"]
    trunc = p["trunc"]
    if min(a, b, c, t_base, t_apex) <= 0:
        raise ResolutionError("shape lengths must be positive")

    R, S, L = resolution.rings, resolution.sectors, resolution.layers
    z_base = trunc * c
    # Endo and epi ellipsoids share the truncation plane.
    A_epi, B_epi, C_epi = a + t_base, b + t_base, c + t_apex
    if z_base >= C_epi or z_base >= c:
        raise ResolutionError("truncation plane above the shell")
    mu_max_endo = np.arccos(-z_base / c)
    mu_max_epi = np.arccos(-z_base / C_epi)

    # node index maps: pole[l], ring[(i, j, l)] with i in 1..R
    nodes = []
    pole = []
    for l in range(L + 1):
        w = l / L
        p_endo = np.array([0.0, 0.0, -c])
        p_epi = np.array([0.0, 0.0, -C_epi])
        pole.append(len(nodes))
        nodes.append((1 - w) * p_endo + w * p_epi)
    ring = {}
    for i in range(1, R + 1):
        mu_e = mu_max_endo * i / R
        mu_o = mu_max_epi * i / R
        for j in range(S):
            phi = 2 * np.pi * j / S
            p_endo = _surface_point(a, b, c, mu_e, phi)
            p_epi = _surface_point(A_epi, B_epi, C_epi, mu_o, phi)
            for l in range(L + 1):
                w = l / L
                ring[(i, j, l)] = len(nodes)
                nodes.append((1 - w) * p_endo + w * p_epi)
    nodes = np.array(nodes)
    # Pin the basal rim rings exactly onto the basal plane.
    for j in range(S):
        for l in range(L + 1):
            nodes[ring[(R, j, l)], 2] = z_base

    tets = []

    def kuhn_hex(corner):
        """6 tets for the hex given corner[(di,dj,dl)] -> node id."""
        out = []
        for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            path = [(0, 0, 0)]
            cur = [0, 0, 0]
            for axis in perm:
                cur[axis] += 1
                path.append(tuple(cur))
            out.append([corner[s] for s in path])
        return out

    for i in range(1, R):
        for j in range(S):
            jn = (j + 1) % S
            for l in range(L):
                corner = {}
                for di, jj in ((0, j), (1, jn)):
                    for dj, ii in ((0, i), (1, i + 1)):
                        for dl, ll in ((0, l), (1, l + 1)):
                            corner[(dj, di, dl)] = ring[(ii, jj, ll)]
                tets.extend(kuhn_hex(corner))

    # pole wedges: prism (pole, ring1_j, ring1_jn) through layers, split into
    # 3 tets with quad diagonals from the (l=0) corner toward (l=1), matching
    # the Kuhn rule used for the hexes.
    for j in range(S):
        jn = (j + 1) % S
        for l in range(L):
            p0, p1 = pole[l], pole[l + 1]
            a0, a1 = ring[(1, j, l)], ring[(1, j, l + 1)]
            b0, b1 = ring[(1, jn, l)], ring[(1, jn, l + 1)]
            tets.append([p0, a0, b0, b1])
            tets.append([p0, a0, b1, a1])
            tets.append([p0, a1, b1, p1])

    tets = np.array(tets, dtype=np.int64)
    vols = meshcore.tet_volumes(nodes, tets)
    if np.all(vols < 0):
        tets = tets[:, [0, 1, 3, 2]]
        vols = -vols
    if np.any(vols <= 0):
        flip = vols <= 0
        tets[flip] = tets[flip][:, [0, 1, 3, 2]]
        vols = meshcore.tet_volumes(nodes, tets)
        if np.any(vols <= 0):
            raise ResolutionError("shell generation produced inverted tets")

    _check_aspect(nodes, tets)
    mesh = meshcore.extract_surfaces(TetMesh(nodes, tets))

    if enforce_bands:
        n, m = mesh.num_nodes, mesh.num_tets
        if not (NODE_BAND[0] <= n <= NODE_BAND[1]):
            raise ResolutionError(f"node count {n} outside {NODE_BAND}")
        if not (TET_BAND[0] <= m <= TET_BAND[1]):
            raise ResolutionError(f"tet count {m} outside {TET_BAND}")
    return mesh


def _check_aspect(nodes, tets):
    p = nodes[tets]
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    edges = np.stack([np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in pairs])
    longest = edges.max(axis=0)
    vols = np.abs(meshcore.tet_volumes(nodes, tets))
    # face areas -> shortest altitude = 3 V / max face area
    faces = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
    areas = np.stack([
        0.5 * np.linalg.norm(np.cross(p[:, f[1]] - p[:, f[0]],
                                      p[:, f[2]] - p[:, f[0]]), axis=1)
        for f in faces])
    h_min = 3.0 * vols / areas.max(axis=0)
    aspect = longest / h_min
    worst = float(aspect.max())
    if worst >= MAX_ASPECT_RATIO:
        raise ResolutionError(f"element aspect ratio {worst:.1f} exceeds "
                              f"{MAX_ASPECT_RATIO}")


# --- parameter grid --------------------------------------------------------------


def case_grid(preset: str = "full") -> list:
    """Cartesian grid of GlobalParams; 'mini' is the CI-speed 2x2x1 subset."""
    if preset == "full":
        ps, cs = GRID_PRESSURES_MMHG, GRID_STIFFNESS_PA
        te, tp = GRID_THETA_ENDO_DEG, GRID_THETA_EPI_DEG
    elif preset == "mini":
        ps, cs = (6.0, 10.0), (150.0, 300.0)
        te, tp = (60.0,), (-60.0,)
    else:
        raise ValueError(f"unknown grid preset {preset!r}")
    return [GlobalParams(p, c, e, q)
            for p in ps for c in cs for e in te for q in tp]


# --- dataset construction ---------------------------------------------------------


def _case_id(shape_id: str, gp: GlobalParams) -> str:
    return (f"{shape_id}_P{gp.P_mmHg:g}_C{gp.C_Pa:g}"
            f"_te{gp.theta_endo_deg:g}_tp{gp.theta_epi_deg:g}")


def _generate_case(args):
    (shape_id, mesh_path, gp, opts_dict, out_dir) = args
    seed_mesh = meshcore.load_mesh(mesh_path)
    opts = fesolve.SolverOptions(**opts_dict)
    cid = _case_id(shape_id, gp)
    t0 = time.perf_counter()
    try:
        field = fibers.compute_fiber_field(seed_mesh, gp.theta_endo_deg,
                                           gp.theta_epi_deg)
        mat = fesolve.material_for(gp, opts)
        mesh_u, mesh_ed, rep_inv, rep_fwd = fesolve.make_pair(
            seed_mesh, field, mat, gp.P_Pa, opts)
    except (NonConvergence, TopologyError) as exc:
        return CaseRecord(cid, shape_id, gp, "", "", converged=False,
                          solver={"error": type(exc).__name__, "message": str(exc),
                                  "wall_time": time.perf_counter() - t0})
    u_path = os.path.join(out_dir, "cases", f"{cid}_unloaded.json")
    e_path = os.path.join(out_dir, "cases", f"{cid}_ed.json")
    meshcore.save_mesh(mesh_u, u_path)
    meshcore.save_mesh(mesh_ed, e_path)
    solver = {
        "load_mode": opts.load_mode,
        "kappa_over_c": opts.kappa / mat.C if opts.kappa is not None else 10.0,
        "inverse": rep_inv.as_dict(),
        "forward": rep_fwd.as_dict(),
        "wall_time": time.perf_counter() - t0,
    }
    return CaseRecord(cid, shape_id, gp, u_path, e_path, converged=True,
                      solver=solver)


def build_dataset(shapes: list, grid: list, opts: "fesolve.SolverOptions",
                  out_dir: str, seed: int = 0, jobs: int = 1,
                  force: bool = False,
                  resolution: ShellResolution = DEFAULT_RESOLUTION,
                  log=None) -> DatasetManifest:
    """Run the sweep, persist converged cases, and write manifest.jsonl."""
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    if os.path.exists(manifest_path) and not force:
        raise IoError(f"{manifest_path} exists; pass force to overwrite")
    os.makedirs(os.path.join(out_dir, "cases"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "shapes"), exist_ok=True)

    shape_paths = {}
    for spec in shapes:
        mesh = build_shell_mesh(spec, resolution)
        path = os.path.join(out_dir, "shapes", f"{spec.shape_id}_seed_ed.json")
        meshcore.save_mesh(mesh, path)
        shape_paths[spec.shape_id] = path

    tasks = [(spec.shape_id, shape_paths[spec.shape_id], gp,
              opts.as_dict(), out_dir)
             for spec in shapes for gp in grid]
    records = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rec in pool.map(_generate_case, tasks):
                records.append(rec)
                if log:
                    log("case", case_id=rec.case_id, converged=rec.converged)
    else:
        for t in tasks:
            rec = _generate_case(t)
            records.append(rec)
            if log:
                log("case", case_id=rec.case_id, converged=rec.converged)

    kept = sorted([r for r in records if r.converged], key=lambda r: r.case_id)
    failed = sorted([r for r in records if not r.converged], key=lambda r: r.case_id)
    grid_def = {
        "pressures_mmHg": sorted({gp.P_mmHg for gp in grid}),
        "stiffness_Pa": sorted({gp.C_Pa for gp in grid}),
        "theta_endo_deg": sorted({gp.theta_endo_deg for gp in grid}),
        "theta_epi_deg": sorted({gp.theta_epi_deg for gp in grid}),
    }
    manifest = DatasetManifest(records=kept, grid=grid_def, seed=seed)
    save_manifest(manifest, out_dir)
    if failed:
        with open(os.path.join(out_dir, "failures.jsonl"), "w") as fh:
            for r in failed:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    return manifest


def save_manifest(manifest: DatasetManifest, out_dir: str) -> None:
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    tmp = manifest_path + ".tmp"
    with open(tmp, "w") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    os.replace(tmp, manifest_path)
    meta = {"format_version": manifest.version, "seed": manifest.seed,
            "grid": manifest.grid}
    with open(os.path.join(out_dir, "manifest_meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)


def load_manifest(out_dir: str) -> DatasetManifest:
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    if not os.path.exists(manifest_path):
        raise IoError(f"no manifest at {manifest_path}")
    records = []
    with open(manifest_path) as fh:
        for line in fh:
            if line.strip():
                records.append(CaseRecord.from_json(json.loads(line)))
    ids = [r.case_id for r in records]
    if len(set(ids)) != len(ids):
        raise IoError("duplicate case ids in manifest")
    meta_path = os.path.join(out_dir, "manifest_meta.json")
    grid, seed, version = {}, 0, 1
    if os.path.exists(meta_path):
        meta = json.load(open(meta_path))
        grid = meta.get("grid", {})
        seed = meta.get("seed", 0)
        version = meta.get("format_version", 1)
    return DatasetManifest(records=records, grid=grid, seed=seed, version=version)


# --- splits -----------------------------------------------------------------------


def split_by_shape(manifest: DatasetManifest, train_fraction: float = 42 / 60,
                   seed: int = 0):
    """Disjoint train/test case ids at shape granularity."""
    shapes = sorted({r.shape_id for r in manifest.records})
    if len(shapes) < 2:
        raise TooFewShapes(f"need >= 2 shapes, have {len(shapes)}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x59117)))
    order = list(rng.permutation(shapes))
    n_train = int(round(train_fraction * len(shapes)))
    n_train = min(max(n_train, 1), len(shapes) - 1)
    train_shapes = set(order[:n_train])
    train = [r.case_id for r in manifest.records if r.shape_id in train_shapes]
    test = [r.case_id for r in manifest.records if r.shape_id not in train_shapes]
    return train, test


def split_lovo(manifest: DatasetManifest, param_name: str, held_value: float):
    """Hold out every case whose parameter equals held_value."""
    if param_name not in PARAM_BOUNDS:
        raise ValueNotInGrid(f"unknown parameter {param_name!r}")
    values = {getattr(r.params, param_name) for r in manifest.records}
    if held_value not in values:
        raise ValueNotInGrid(f"{param_name}={held_value} not present in the manifest")
    test = [r.case_id for r in manifest.records
            if getattr(r.params, param_name) == held_value]
    train = [r.case_id for r in manifest.records
             if getattr(r.params, param_name) != held_value]
    return train, test
