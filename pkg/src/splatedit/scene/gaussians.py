"""Explicit Gaussian scene: per-point parameters, labels, generations, anchors.

Storage conventions follow common splat checkpoints: scales in log domain,
opacity in logit domain, rotations as quaternions normalized on use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConsistencyError, ValidationError
from . import sh as sh_mod

ANCHOR_FIELDS = ("positions", "log_scales", "rotations", "opacities", "sh")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def normalize_quats(q: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Normalize quaternion rows whose norm is off by more than `tol`.

    Rows already unit within `tol` are left untouched so that float32
    splat files survive a load/save round trip bit-exactly. Zero rows
    become the identity rotation.
    """
    q = np.array(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=1)
    zero = norms < 1e-12
    q[zero] = (1.0, 0.0, 0.0, 0.0)
    norms[zero] = 1.0
    off = np.abs(norms - 1.0) > tol
    q[off] /= norms[off, None]
    return q


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Quaternion rows (w,x,y,z) to rotation matrices (N,3,3)."""
    q = np.atleast_2d(q)
    n = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / n).T
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_matrices(rotations: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(exp(log_scales)). Returns (N,3,3)."""
    R = quat_to_rotmat(rotations)
    S = np.exp(np.atleast_2d(log_scales))
    RS = R * S[:, None, :]
    return RS @ np.swapaxes(RS, 1, 2)


@dataclass
class Gaussian:
    """A single splat; convenience view used for construction and tests."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # (B, 3)

    def covariance(self) -> np.ndarray:
        return covariance_matrices(self.rotation[None], self.log_scale[None])[0]

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


class GaussianScene:
    """Ordered Gaussian collection with labels, generations, and anchors.

    All per-Gaussian structures stay row-aligned through densify, prune,
    label removal and concatenation.
    """

    def __init__(self, positions=None, log_scales=None, rotations=None,
                 opacities=None, sh=None, sh_degree: int = 0,
                 label_ids=None, label_matrix=None, label_names=None,
                 generations=None, anchors=None):
        n = 0 if positions is None else len(positions)
        B = sh_mod.n_bases(sh_degree)
        self.positions = self._arr(positions, (n, 3))
        self.log_scales = self._arr(log_scales, (n, 3))
        self.rotations = self._arr(rotations, (n, 4))
        if self.rotations.size:
            self.rotations = normalize_quats(self.rotations)
        self.opacities = self._arr(opacities, (n,))
        self.sh = self._arr(sh, (n, B, 3))
        self.sh_degree = int(sh_degree)
        self.label_ids: list[int] = list(label_ids) if label_ids else []
        self.label_matrix = (np.zeros((n, 0), dtype=bool) if label_matrix is None
                             else np.asarray(label_matrix, dtype=bool).reshape(n, -1))
        self.label_names: dict[int, str] = dict(label_names) if label_names else {}
        self.generations = (np.zeros(n, dtype=np.int32) if generations is None
                            else np.asarray(generations, dtype=np.int32).reshape(n))
        self.anchors: dict[str, np.ndarray] | None = anchors
        self.check_rows()

    @staticmethod
    def _arr(a, shape):
        if a is None:
            return np.zeros(shape, dtype=np.float64)
        return np.asarray(a, dtype=np.float64).reshape(shape)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def check_rows(self):
        n = self.n
        bad = {}
        for name in ("log_scales", "rotations", "opacities", "sh",
                     "generations", "label_matrix"):
            rows = getattr(self, name).shape[0]
            if rows != n:
                bad[name] = rows
        if self.label_matrix.shape[1] != len(self.label_ids):
            bad["label_ids"] = len(self.label_ids)
        if self.anchors is not None:
            for k in ANCHOR_FIELDS:
                if self.anchors[k].shape[0] != n:
                    bad[f"anchors.{k}"] = self.anchors[k].shape[0]
        if bad:
            raise ConsistencyError(f"row mismatch vs {n} gaussians: {bad}")

    # -- activations ------------------------------------------------------

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def opacity_values(self) -> np.ndarray:
        return sigmoid(self.opacities)

    def covariances(self) -> np.ndarray:
        return covariance_matrices(self.rotations, self.log_scales)

    def extent(self) -> float:
        """Half the bounding-box diagonal; 1.0 for degenerate scenes."""
        if self.n < 2:
            return 1.0
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        d = 0.5 * float(np.linalg.norm(span))
        return d if d > 1e-9 else 1.0

    # -- labels -----------------------------------------------------------

    def label_column(self, label_id: int) -> np.ndarray:
        if label_id not in self.label_ids:
            raise ValidationError(f"unknown label id {label_id}")
        return self.label_matrix[:, self.label_ids.index(label_id)]

    def add_label(self, label_id: int, members: np.ndarray, name: str = ""):
        members = np.asarray(members, dtype=bool).reshape(self.n)
        if label_id in self.label_ids:
            self.label_matrix[:, self.label_ids.index(label_id)] = members
        else:
            self.label_ids.append(label_id)
            self.label_matrix = np.column_stack(
                [self.label_matrix, members]) if self.label_matrix.size or members.size else \
                np.zeros((self.n, len(self.label_ids)), dtype=bool)
        if name:
            self.label_names[label_id] = name

    def drop_label_column(self, label_id: int):
        if label_id not in self.label_ids:
            raise ValidationError(f"unknown label id {label_id}")
        j = self.label_ids.index(label_id)
        self.label_matrix = np.delete(self.label_matrix, j, axis=1)
        self.label_ids.pop(j)
        self.label_names.pop(label_id, None)

    def next_label_id(self) -> int:
        return (max(self.label_ids) + 1) if self.label_ids else 0

    # -- row surgery ------------------------------------------------------

    def keep_rows(self, keep: np.ndarray) -> None:
        """Restrict every per-Gaussian structure to `keep` (mask or index)."""
        self.positions = self.positions[keep]
        self.log_scales = self.log_scales[keep]
        self.rotations = self.rotations[keep]
        self.opacities = self.opacities[keep]
        self.sh = self.sh[keep]
        self.generations = self.generations[keep]
        self.label_matrix = self.label_matrix[keep]
        if self.anchors is not None:
            self.anchors = {k: v[keep] for k, v in self.anchors.items()}
        self.check_rows()

    def append_rows(self, positions, log_scales, rotations, opacities, sh,
                    generations, label_rows, anchor_rows=None):
        """Append new Gaussians; anchors of new rows default to their state."""
        m = len(positions)
        self.positions = np.vstack([self.positions, positions])
        self.log_scales = np.vstack([self.log_scales, log_scales])
        self.rotations = np.vstack([self.rotations, normalize_quats(rotations)])
        self.opacities = np.concatenate([self.opacities, opacities])
        self.sh = np.concatenate([self.sh, sh], axis=0)
        self.generations = np.concatenate(
            [self.generations, np.asarray(generations, dtype=np.int32).reshape(m)])
        label_rows = np.asarray(label_rows, dtype=bool).reshape(m, len(self.label_ids))
        self.label_matrix = np.vstack([self.label_matrix, label_rows])
        if self.anchors is not None:
            new = anchor_rows or {
                "positions": positions, "log_scales": log_scales,
                "rotations": rotations, "opacities": opacities, "sh": sh,
            }
            self.anchors = {k: np.concatenate(
                [self.anchors[k], np.asarray(new[k], dtype=np.float64)], axis=0)
                for k in ANCHOR_FIELDS}
        self.check_rows()

    def snapshot_anchors(self) -> None:
        self.anchors = {
            "positions": self.positions.copy(),
            "log_scales": self.log_scales.copy(),
            "rotations": self.rotations.copy(),
            "opacities": self.opacities.copy(),
            "sh": self.sh.copy(),
        }

    def current_state(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions, "log_scales": self.log_scales,
            "rotations": self.rotations, "opacities": self.opacities,
            "sh": self.sh,
        }

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacities.copy(), self.sh.copy(), self.sh_degree,
            list(self.label_ids), self.label_matrix.copy(), dict(self.label_names),
            self.generations.copy(),
            None if self.anchors is None else {k: v.copy() for k, v in self.anchors.items()},
        )


def pad_sh(sh: np.ndarray, from_deg: int, to_deg: int) -> np.ndarray:
    if from_deg == to_deg:
        return sh
    out = np.zeros((sh.shape[0], sh_mod.n_bases(to_deg), 3), dtype=np.float64)
    out[:, :sh_mod.n_bases(from_deg)] = sh
    return out


def concatenate(a: GaussianScene, b: GaussianScene) -> GaussianScene:
    """Row-wise union of two scenes.

    b's label ids are remapped past a's so they never collide, and b's
    generations are offset past a's maximum so a fresh constraint schedule
    applies to the incoming rows.
    """
    deg = max(a.sh_degree, b.sh_degree)
    sh_a = pad_sh(a.sh, a.sh_degree, deg)
    sh_b = pad_sh(b.sh, b.sh_degree, deg)

    base_id = (max(a.label_ids) + 1) if a.label_ids else 0
    b_ids = [base_id + i for i in range(len(b.label_ids))]
    label_ids = list(a.label_ids) + b_ids
    names = dict(a.label_names)
    for new_id, old_id in zip(b_ids, b.label_ids):
        names[new_id] = b.label_names.get(old_id, f"label_{new_id}")

    n_a, n_b = a.n, b.n
    matrix = np.zeros((n_a + n_b, len(label_ids)), dtype=bool)
    matrix[:n_a, :len(a.label_ids)] = a.label_matrix
    matrix[n_a:, len(a.label_ids):] = b.label_matrix

    gen_offset = (int(a.generations.max()) + 1) if n_a else 0
    generations = np.concatenate(
        [a.generations, b.generations + np.int32(gen_offset)])

    anchors = None
    if a.anchors is not None or b.anchors is not None:
        an_a = a.anchors or a.current_state()
        an_b = b.anchors or b.current_state()
        an_a = dict(an_a, sh=pad_sh(an_a["sh"], a.sh_degree, deg))
        an_b = dict(an_b, sh=pad_sh(an_b["sh"], b.sh_degree, deg))
        anchors = {k: np.concatenate([an_a[k], an_b[k]], axis=0)
                   for k in ANCHOR_FIELDS}

    return GaussianScene(
        np.vstack([a.positions, b.positions]),
        np.vstack([a.log_scales, b.log_scales]),
        np.vstack([a.rotations, b.rotations]),
        np.concatenate([a.opacities, b.opacities]),
        np.concatenate([sh_a, sh_b], axis=0),
        deg, label_ids, matrix, names, generations, anchors,
    )


def scenes_equal(a: GaussianScene, b: GaussianScene, check_labels: bool = True) -> bool:
    """Exact (bitwise) equality of all per-Gaussian state."""
    if a.n != b.n or a.sh_degree != b.sh_degree:
        return False
    same = (np.array_equal(a.positions, b.positions)
            and np.array_equal(a.log_scales, b.log_scales)
            and np.array_equal(a.rotations, b.rotations)
            and np.array_equal(a.opacities, b.opacities)
            and np.array_equal(a.sh, b.sh)
            and np.array_equal(a.generations, b.generations))
    if not same:
        return False
    if check_labels:
        if a.label_ids != b.label_ids or not np.array_equal(a.label_matrix, b.label_matrix):
            return False
    if (a.anchors is None) != (b.anchors is None):
        return False
    if a.anchors is not None:
        for k in ANCHOR_FIELDS:
            if not np.array_equal(a.anchors[k], b.anchors[k]):
                return False
    return True
