"""Binary PLY reader/writer for splat scenes plus the JSON sidecar.

The vertex layout is the de-facto splat interchange: float32 properties
x,y,z,nx,ny,nz,f_dc_0..2,f_rest_*,opacity,scale_0..2,rot_0..3. Labels,
generations and anchors travel in a sidecar JSON next to the PLY so any
third-party splat viewer can still open the file.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from ..errors import ConsistencyError, FormatError
from . import sh as sh_mod
from .gaussians import ANCHOR_FIELDS, GaussianScene


def _property_names(degree: int) -> list[str]:
    n_rest = 3 * sh_mod.n_bases(degree) - 3
    names = ["x", "y", "z", "nx", "ny", "nz",
             "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def sidecar_path(path: str) -> str:
    return path + ".json"


def save_scene(scene: GaussianScene, path: str) -> None:
    """Write scene as binary little-endian PLY + sidecar JSON."""
    names = _property_names(scene.sh_degree)
    n = scene.n
    data = np.empty((n, len(names)), dtype="<f4")
    data[:, 0:3] = scene.positions
    data[:, 3:6] = 0.0  # normals, unused
    data[:, 6:9] = scene.sh[:, 0, :]
    n_rest = scene.sh.shape[1] - 1
    if n_rest:
        # channel-major rest block: (N, 3, B-1) flattened
        data[:, 9:9 + 3 * n_rest] = (
            scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * n_rest))
    o = 9 + 3 * n_rest
    data[:, o] = scene.opacities
    data[:, o + 1:o + 4] = scene.log_scales
    data[:, o + 4:o + 8] = scene.rotations

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())

    sidecar = {
        "labels": {
            str(lid): {
                "name": scene.label_names.get(lid, f"label_{lid}"),
                "members": np.nonzero(scene.label_matrix[:, j])[0].tolist(),
            }
            for j, lid in enumerate(scene.label_ids)
        },
        "generations": scene.generations.tolist(),
    }
    if scene.anchors is not None:
        block = np.concatenate(
            [scene.anchors[k].astype("<f4").reshape(n, -1) for k in ANCHOR_FIELDS],
            axis=1)
        sidecar["anchors"] = base64.b64encode(block.tobytes()).decode("ascii")
    with open(sidecar_path(path), "w") as f:
        json.dump(sidecar, f)


def _parse_header(f) -> tuple[list[str], int]:
    line = f.readline().decode("ascii", "replace").strip()
    if line != "ply":
        raise FormatError("not a PLY file (missing 'ply' magic)")
    fmt = f.readline().decode("ascii", "replace").strip()
    if fmt != "format binary_little_endian 1.0":
        raise FormatError(f"unsupported PLY format line: '{fmt}'")
    names: list[str] = []
    count = None
    while True:
        raw = f.readline()
        if not raw:
            raise FormatError("unexpected end of header")
        line = raw.decode("ascii", "replace").strip()
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "comment":
            continue
        if parts[0] == "element":
            if parts[1] != "vertex":
                raise FormatError(f"unsupported element '{parts[1]}'")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise FormatError(
                    f"property '{parts[-1]}' has type '{parts[1]}', expected float")
            names.append(parts[2])
        else:
            raise FormatError(f"unexpected header line: '{line}'")
    if count is None:
        raise FormatError("missing 'element vertex' declaration")
    return names, count


def load_scene(path: str) -> GaussianScene:
    """Read a splat PLY (+ optional sidecar) into a GaussianScene."""
    with open(path, "rb") as f:
        names, n = _parse_header(f)
        payload = f.read(4 * len(names) * n)
    if len(payload) != 4 * len(names) * n:
        raise FormatError("truncated PLY payload")

    rest = [p for p in names if p.startswith("f_rest_")]
    n_rest = len(rest)
    if n_rest % 3 != 0:
        raise FormatError(f"f_rest property count {n_rest} not divisible by 3")
    bases = n_rest // 3 + 1
    degree = int(round(np.sqrt(bases))) - 1
    if degree not in (0, 1, 2, 3) or sh_mod.n_bases(degree) != bases:
        raise FormatError(f"f_rest_{n_rest - 1} implies invalid SH degree")
    expected = _property_names(degree)
    for i, (got, want) in enumerate(zip(names, expected)):
        if got != want:
            raise FormatError(f"property {i} is '{got}', expected '{want}'")
    if len(names) != len(expected):
        raise FormatError(
            f"expected {len(expected)} properties, found {len(names)}")

    data = np.frombuffer(payload, dtype="<f4").reshape(n, len(names)).astype(np.float64)
    sh = np.zeros((n, bases, 3), dtype=np.float64)
    sh[:, 0, :] = data[:, 6:9]
    if bases > 1:
        sh[:, 1:, :] = data[:, 9:9 + n_rest].reshape(n, 3, bases - 1).transpose(0, 2, 1)
    o = 9 + n_rest
    scene = GaussianScene(
        positions=data[:, 0:3], log_scales=data[:, o + 1:o + 4],
        rotations=data[:, o + 4:o + 8], opacities=data[:, o],
        sh=sh, sh_degree=degree,
    )

    sc_path = sidecar_path(path)
    if os.path.exists(sc_path):
        with open(sc_path) as f:
            sidecar = json.load(f)
        gens = sidecar.get("generations", [])
        if len(gens) != n:
            raise ConsistencyError(
                f"sidecar has {len(gens)} generation rows for {n} gaussians")
        scene.generations = np.asarray(gens, dtype=np.int32)
        for lid_s, entry in sorted(sidecar.get("labels", {}).items(),
                                   key=lambda kv: int(kv[0])):
            members = np.zeros(n, dtype=bool)
            idx = np.asarray(entry.get("members", []), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ConsistencyError(
                    f"label {lid_s} member index out of range for {n} gaussians")
            members[idx] = True
            scene.add_label(int(lid_s), members, entry.get("name", ""))
        if "anchors" in sidecar and sidecar["anchors"]:
            block = np.frombuffer(
                base64.b64decode(sidecar["anchors"]), dtype="<f4")
            widths = {"positions": 3, "log_scales": 3, "rotations": 4,
                      "opacities": 1, "sh": bases * 3}
            total = sum(widths.values())
            if block.size != n * total:
                raise ConsistencyError(
                    f"anchor block has {block.size} floats, expected {n * total}")
            block = block.reshape(n, total).astype(np.float64)
            anchors, col = {}, 0
            for k in ANCHOR_FIELDS:
                w = widths[k]
                arr = block[:, col:col + w]
                anchors[k] = arr.reshape(n, bases, 3) if k == "sh" else \
                    (arr.reshape(n) if w == 1 else arr)
                col += w
            scene.anchors = anchors
    scene.check_rows()
    return scene
