"""Serialization of meshes, fields, snapshot sets, bases and reduced
systems.

Binary container layout shared by every "ROMFORGE-* v1" format:

    <magic line>\\n
    <header byte count, ASCII>\\n
    <JSON header, UTF-8>\\n
    <array payload>

The JSON header carries the format metadata plus an ordered array
table (name, dtype, shape); the payload is the concatenation of the
arrays in table order, little-endian, C-contiguous. Headers are
serialized with sorted keys so identical inputs give byte-identical
files, which the pipeline-integrity digests rely on.

Directory layouts:

* snapshots: manifest.json + mesh.rfm + one velocity and one pressure
  field file per snapshot;
* basis: manifest.json + mesh.rfm + one field file per mode (liftings
  included, with their patch names and pre-normalization scales in the
  manifest).

Each manifest records the sha256 of every referenced file; a content
digest over those hashes (timing fields excluded) identifies the
artifact in downstream lineage checks.
"""

import csv
import hashlib
import json
import os

import numpy as np

from .errors import ConfigError
from .fom_solver import SnapshotSet
from .galerkin import ReducedSystem
from .mesh_fields import ScalarField, StructuredMesh2D, VectorField
from .pod import CoefficientTrajectory, LiftingFunction, PodBasis

MAGIC_MESH = "ROMFORGE-MESH v1"
MAGIC_FIELD = "ROMFORGE-FIELD v1"
MAGIC_REDSYS = "ROMFORGE-REDSYS v1"
FORMAT_SNAPSHOTS = "ROMFORGE-SNAPSHOTS v1"
FORMAT_BASIS = "ROMFORGE-BASIS v1"

_ALLOWED_DTYPES = {"<f8", "<i8", "|i1"}


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_container(path, magic, meta, arrays):
    """arrays: ordered list of (name, ndarray)."""
    table = []
    blobs = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            dt = "<f8"
        elif arr.dtype == np.int64:
            dt = "<i8"
        elif arr.dtype == np.int8:
            dt = "|i1"
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r}")
        arr = arr.astype(np.dtype(dt), copy=False)
        table.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = _canonical_json({"meta": meta, "arrays": table}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic.encode("ascii") + b"\n")
        fh.write(str(len(header)).encode("ascii") + b"\n")
        fh.write(header + b"\n")
        for blob in blobs:
            fh.write(blob)


def _read_container(path, magic):
    with open(path, "rb") as fh:
        got = fh.readline().rstrip(b"\n").decode("ascii", errors="replace")
        if got != magic:
            raise ConfigError(f"{path}: expected {magic!r}, found {got!r}")
        try:
            n = int(fh.readline().rstrip(b"\n"))
        except ValueError:
            raise ConfigError(f"{path}: corrupt header length") from None
        header = json.loads(fh.read(n).decode("utf-8"))
        fh.read(1)          # newline after the header
        meta = header["meta"]
        arrays = {}
        for entry in header["arrays"]:
            dt = entry["dtype"]
            if dt not in _ALLOWED_DTYPES:
                raise ConfigError(f"{path}: unsupported dtype {dt!r}")
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            dtype = np.dtype(dt)
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ConfigError(f"{path}: truncated array "
                                  f"{entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype
                                                  ).reshape(shape).copy()
    return meta, arrays


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- mesh

def write_mesh(path, mesh):
    meta = {
        "nx": mesh.nx, "ny": mesh.ny, "dx": mesh.dx, "dy": mesh.dy,
        "origin": list(mesh.origin),
        "patch_table": [{"name": p.name, "kind": p.kind}
                        for p in mesh.patches],
    }
    arrays = [
        ("active_mask", mesh.active_mask.astype(np.int8)),
        ("bf_ix", mesh.cell_ix[mesh.bf_cell].astype(np.int64)),
        ("bf_iy", mesh.cell_iy[mesh.bf_cell].astype(np.int64)),
        ("bf_side", mesh.bf_side.astype(np.int64)),
        ("bf_patch", mesh.bf_patch.astype(np.int64)),
    ]
    _write_container(path, MAGIC_MESH, meta, arrays)


def read_mesh(path):
    meta, arrays = _read_container(path, MAGIC_MESH)
    table = [(str(e["name"]), str(e["kind"])) for e in meta["patch_table"]]
    lookup = {}
    for ix, iy, side, ip in zip(arrays["bf_ix"], arrays["bf_iy"],
                                arrays["bf_side"], arrays["bf_patch"]):
        lookup[(int(ix), int(iy), int(side))] = table[int(ip)]

    def patch_of_face(mesh, f):
        c = mesh.bf_cell[f]
        key = (int(mesh.cell_ix[c]), int(mesh.cell_iy[c]),
               int(mesh.bf_side[f]))
        try:
            return lookup[key]
        except KeyError:
            raise ConfigError(f"{path}: boundary face {key} missing from "
                              f"the stored patch table") from None

    return StructuredMesh2D(int(meta["nx"]), int(meta["ny"]),
                            float(meta["dx"]), float(meta["dy"]),
                            arrays["active_mask"].astype(bool),
                            patch_of_face,
                            origin=tuple(meta["origin"]))


# --------------------------------------------------------------- fields

def write_field(path, field):
    meta = {
        "ncomp": field.ncomp,
        "time_stamp": field.time_stamp,
        "mesh_signature": field.mesh.signature(),
    }
    arrays = [
        ("cell_values", field.cell_values),
        ("boundary_values", field.global_boundary_values()),
    ]
    _write_container(path, MAGIC_FIELD, meta, arrays)


def read_field(path, mesh):
    meta, arrays = _read_container(path, MAGIC_FIELD)
    if meta["mesh_signature"] != mesh.signature():
        raise ConfigError(f"{path}: field was written for a different mesh")
    cls = ScalarField if int(meta["ncomp"]) == 1 else VectorField
    f = cls(mesh, arrays["cell_values"], time_stamp=meta["time_stamp"])
    f.set_global_boundary_values(arrays["boundary_values"])
    return f


# ------------------------------------------------------------ snapshots

def write_snapshots(dirpath, snaps, config_dict=None):
    """Persist a SnapshotSet as a directory; returns its content digest."""
    os.makedirs(dirpath, exist_ok=True)
    write_mesh(os.path.join(dirpath, "mesh.rfm"), snaps.mesh)
    vel_files, p_files = [], []
    for n, (u, p) in enumerate(zip(snaps.velocity_fields,
                                   snaps.pressure_fields)):
        vf = f"u_{n:05d}.rff"
        pf = f"p_{n:05d}.rff"
        write_field(os.path.join(dirpath, vf), u)
        write_field(os.path.join(dirpath, pf), p)
        vel_files.append(vf)
        p_files.append(pf)
    hashes = {f: file_sha256(os.path.join(dirpath, f))
              for f in ["mesh.rfm"] + vel_files + p_files}
    digest_src = _canonical_json({
        "times": list(snaps.times),
        "config_hash": snaps.config_hash,
        "hashes": hashes,
    })
    digest = hashlib.sha256(digest_src.encode("utf-8")).hexdigest()
    manifest = {
        "format": FORMAT_SNAPSHOTS,
        "times": list(snaps.times),
        "mesh": "mesh.rfm",
        "velocity": vel_files,
        "pressure": p_files,
        "bc_trace": {k: np.asarray(v).tolist()
                     for k, v in snaps.bc_trace.items()},
        "config_hash": snaps.config_hash,
        "config": config_dict,
        "hashes": hashes,
        "digest": digest,
        "wall_time": snaps.wall_time,
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return digest


def _load_manifest(dirpath, expected_format):
    mpath = os.path.join(dirpath, "manifest.json")
    if not os.path.isfile(mpath):
        raise ConfigError(f"{dirpath}: no manifest.json")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != expected_format:
        raise ConfigError(f"{dirpath}: expected {expected_format!r}, found "
                          f"{manifest.get('format')!r}")
    return manifest


def read_snapshots(dirpath, verify=True):
    manifest = _load_manifest(dirpath, FORMAT_SNAPSHOTS)
    if verify:
        _verify_hashes(dirpath, manifest)
    mesh = read_mesh(os.path.join(dirpath, manifest["mesh"]))
    vels = [read_field(os.path.join(dirpath, f), mesh)
            for f in manifest["velocity"]]
    press = [read_field(os.path.join(dirpath, f), mesh)
             for f in manifest["pressure"]]
    return SnapshotSet(mesh, manifest["times"], vels, press,
                       {k: np.asarray(v)
                        for k, v in manifest["bc_trace"].items()},
                       config_hash=manifest.get("config_hash", ""),
                       wall_time=manifest.get("wall_time"))


def _verify_hashes(dirpath, manifest):
    for fname, expect in manifest.get("hashes", {}).items():
        got = file_sha256(os.path.join(dirpath, fname))
        if got != expect:
            raise ConfigError(f"{dirpath}/{fname}: content hash mismatch "
                              f"(artifact corrupted or regenerated)")


def snapshot_digest(dirpath):
    return _load_manifest(dirpath, FORMAT_SNAPSHOTS)["digest"]


# ---------------------------------------------------------------- basis

def write_basis(dirpath, basis, lineage=None):
    """Persist a PodBasis as a directory; returns its content digest."""
    os.makedirs(dirpath, exist_ok=True)
    write_mesh(os.path.join(dirpath, "mesh.rfm"), basis.mesh)
    lift_entries = []
    for j, lf in enumerate(basis.liftings):
        fname = f"lift_{j:03d}.rff"
        write_field(os.path.join(dirpath, fname), lf.field)
        lift_entries.append({"file": fname, "patch": lf.patch_name,
                             "scale": lf.scale})
    mode_files = []
    for k, mode in enumerate(basis.pod_modes):
        fname = f"mode_{k:03d}.rff"
        write_field(os.path.join(dirpath, fname), mode)
        mode_files.append(fname)
    files = ["mesh.rfm"] + [e["file"] for e in lift_entries] + mode_files
    hashes = {f: file_sha256(os.path.join(dirpath, f)) for f in files}
    digest_src = _canonical_json({
        "component_tag": basis.component_tag,
        "n_lift": basis.n_lift,
        "eigenvalues": list(basis.eigenvalues),
        "hashes": hashes,
    })
    digest = hashlib.sha256(digest_src.encode("utf-8")).hexdigest()
    manifest = {
        "format": FORMAT_BASIS,
        "component_tag": basis.component_tag,
        "eigenvalues": list(basis.eigenvalues),
        "n_lift": basis.n_lift,
        "mesh": "mesh.rfm",
        "liftings": lift_entries,
        "modes": mode_files,
        "hashes": hashes,
        "digest": digest,
        "lineage": dict(lineage or {}),
    }
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return digest


def read_basis(dirpath, verify=True):
    manifest = _load_manifest(dirpath, FORMAT_BASIS)
    if verify:
        _verify_hashes(dirpath, manifest)
    mesh = read_mesh(os.path.join(dirpath, manifest["mesh"]))
    liftings = []
    for e in manifest["liftings"]:
        field = read_field(os.path.join(dirpath, e["file"]), mesh)
        lf = LiftingFunction(field, e["patch"])
        lf.scale = float(e["scale"])    # pre-normalization norm, not 1
        liftings.append(lf)
    modes = [read_field(os.path.join(dirpath, f), mesh)
             for f in manifest["modes"]]
    return PodBasis(mesh, modes, np.asarray(manifest["eigenvalues"]),
                    liftings=liftings,
                    component_tag=manifest["component_tag"])


def basis_digest(dirpath):
    return _load_manifest(dirpath, FORMAT_BASIS)["digest"]


def basis_lineage(dirpath):
    return _load_manifest(dirpath, FORMAT_BASIS).get("lineage", {})


# -------------------------------------------------------- reduced system

def write_reduced_system(path, system):
    meta = {
        "nu": system.nu,
        "r_u": system.r_u,
        "r_p": system.r_p,
        "n_lift": system.n_lift,
        "lifting_patches": list(system.lifting_patches),
        "penalty_patches": list(system.penalty_patches),
        "mesh_signature": system.mesh_signature,
        "lineage": system.lineage,
        "has_penalty": system.has_penalty,
        "has_face_values": system.penalty_face_values is not None,
    }
    arrays = [
        ("M", system.M), ("A", system.A), ("B", system.B), ("C", system.C),
        ("D", system.D), ("G", system.G),
        ("N_mat", system.N_mat), ("T_mat", system.T_mat),
        ("lifting_boundary_vectors", system.lifting_boundary_vectors),
        ("boundary_means", system.boundary_means),
    ]
    if system.has_penalty:
        arrays += [("P1", system.P1), ("P2", system.P2),
                   ("penalty_patch_areas", system.penalty_patch_areas)]
        if system.penalty_face_values is not None:
            for l, fv in enumerate(system.penalty_face_values):
                arrays.append((f"penalty_face_values_{l}", fv))
    _write_container(path, MAGIC_REDSYS, meta, arrays)


def read_reduced_system(path):
    meta, arrays = _read_container(path, MAGIC_REDSYS)
    P1 = arrays.get("P1")
    P2 = arrays.get("P2")
    face_values = None
    if meta.get("has_face_values"):
        face_values = [arrays[f"penalty_face_values_{l}"]
                       for l in range(len(meta["penalty_patches"]))]
    return ReducedSystem(
        meta["nu"], arrays["M"], arrays["A"], arrays["B"], arrays["C"],
        arrays["D"], arrays["G"], arrays["N_mat"], arrays["T_mat"],
        n_lift=int(meta["n_lift"]),
        lifting_patches=meta["lifting_patches"],
        lifting_boundary_vectors=arrays["lifting_boundary_vectors"],
        P1=P1, P2=P2,
        penalty_patches=meta["penalty_patches"],
        penalty_patch_areas=arrays.get("penalty_patch_areas"),
        boundary_means=arrays["boundary_means"],
        penalty_face_values=face_values,
        mesh_signature=meta["mesh_signature"],
        lineage=meta.get("lineage"))


# ------------------------------------------------------------ trajectory

def write_trajectory_csv(path, traj):
    """CSV columns: time, velocity coefficients, pressure coefficients,
    then the reconstructed boundary vector per controlled patch."""
    n_a = traj.a.shape[1]
    n_b = 0 if traj.b is None else traj.b.shape[1]
    patches = sorted(traj.u_bc)
    header = (["time"]
              + [f"a_{i:03d}" for i in range(n_a)]
              + [f"b_{i:03d}" for i in range(n_b)]
              + [f"ubc_{p}_{c}" for p in patches for c in ("x", "y")])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for n, t in enumerate(traj.times):
            row = [repr(float(t))]
            row += [repr(float(v)) for v in traj.a[n]]
            if traj.b is not None:
                row += [repr(float(v)) for v in traj.b[n]]
            for p in patches:
                row += [repr(float(traj.u_bc[p][n, 0])),
                        repr(float(traj.u_bc[p][n, 1]))]
            wr.writerow(row)


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(v) for v in row] for row in rd]
    data = np.asarray(rows, dtype=np.float64)
    a_cols = [i for i, h in enumerate(header) if h.startswith("a_")]
    b_cols = [i for i, h in enumerate(header) if h.startswith("b_")]
    bc_cols = [i for i, h in enumerate(header) if h.startswith("ubc_")]
    times = data[:, header.index("time")]
    a = data[:, a_cols]
    b = data[:, b_cols] if b_cols else None
    u_bc = {}
    for i in bc_cols:
        name = header[i][len("ubc_"):-2]
        comp = 0 if header[i].endswith("_x") else 1
        u_bc.setdefault(name, np.zeros((times.size, 2)))[:, comp] = data[:, i]
    return CoefficientTrajectory(times, a, b, u_bc=u_bc)
