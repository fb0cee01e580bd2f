"""Generation-constrained splat optimization.

Gaussians belong to the densification round ("generation") that created
them; each generation carries an anchor-loss strength that grows every
round, so older content stiffens while fresh densifications stay free to
carve detail. A session couples that schedule with a guidance backend,
percentage-based densification, pruning, and an Adam update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import EditConfig, OptimizerConfig, ScheduleConfig
from .errors import ValidationError
from .guidance import build_request, validate_response
from .raster import render, render_backward
from .scene.gaussians import GaussianScene, sigmoid
from .tracing import inherit_labels

PARAM_NAMES = ("positions", "log_scales", "rotations", "opacities", "sh")
REPORT_KEYS = {"positions": "x", "log_scales": "s", "rotations": "q",
               "opacities": "alpha", "sh": "c"}


class AnchorSchedule:
    """Per-generation anchor strengths plus per-property weights."""

    def __init__(self, cfg: ScheduleConfig):
        self.cfg = cfg
        self.lambdas = np.array([cfg.lambda_gen0], dtype=np.float64)
        self.property_weights = {
            "positions": cfg.lambda_position, "log_scales": cfg.lambda_scale,
            "rotations": cfg.lambda_rotation, "opacities": cfg.lambda_opacity,
            "sh": cfg.lambda_sh,
        }

    def row_lambdas(self, generations: np.ndarray) -> np.ndarray:
        """lambda_i per Gaussian; generations beyond the table (inserted
        content) get the new-generation strength."""
        table = self.lambdas
        gens = np.asarray(generations, dtype=np.int64)
        out = np.full(gens.shape, self.cfg.lambda_new, dtype=np.float64)
        known = gens < table.size
        out[known] = table[gens[known]]
        return out

    def grow(self):
        """Densification happened: stiffen every existing generation and
        open a new one."""
        self.lambdas = np.append(self.lambdas * self.cfg.growth,
                                 self.cfg.lambda_new)


def anchor_loss(scene: GaussianScene, schedule: AnchorSchedule):
    """Per-property sum_i lambda_i ||P_i - P^_i||^2 and the weighted total."""
    if scene.anchors is None:
        raise ValidationError("anchor loss requires snapshotted anchors")
    lam = schedule.row_lambdas(scene.generations)
    per_property = {}
    total = 0.0
    state = scene.current_state()
    for name in PARAM_NAMES:
        diff = (state[name] - scene.anchors[name]).reshape(scene.n, -1)
        val = float(np.sum(lam * np.sum(diff * diff, axis=1)))
        per_property[name] = val
        total += schedule.property_weights[name] * val
    return per_property, total


def anchor_gradients(scene: GaussianScene, schedule: AnchorSchedule):
    """d(total anchor loss)/dP = 2 * lambda_P * lambda_i * (P - P^)."""
    lam = schedule.row_lambdas(scene.generations)
    state = scene.current_state()
    grads = {}
    for name in PARAM_NAMES:
        w = 2.0 * schedule.property_weights[name]
        diff = state[name] - scene.anchors[name]
        shape = (scene.n,) + (1,) * (diff.ndim - 1)
        grads[name] = w * lam.reshape(shape) * diff
    return grads


def snapshot_anchors(scene: GaussianScene) -> None:
    scene.snapshot_anchors()


class Adam:
    """Per-parameter adaptive update whose state rows track the scene."""

    def __init__(self, cfg: OptimizerConfig, n: int, sh_shape, extent: float):
        self.cfg = cfg
        self.extent = extent
        self.t = 0
        self.m = {name: np.zeros(shape) for name, shape in
                  self._shapes(n, sh_shape).items()}
        self.v = {name: np.zeros(shape) for name, shape in
                  self._shapes(n, sh_shape).items()}

    @staticmethod
    def _shapes(n, sh_shape):
        return {"positions": (n, 3), "log_scales": (n, 3),
                "rotations": (n, 4), "opacities": (n,), "sh": sh_shape}

    def lr(self, name: str) -> float:
        c = self.cfg
        return {"positions": c.lr_position * self.extent,
                "log_scales": c.lr_scale, "rotations": c.lr_rotation,
                "opacities": c.lr_opacity, "sh": c.lr_sh}[name]

    def apply(self, scene: GaussianScene, grads, allowed: np.ndarray):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name in PARAM_NAMES:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            step = self.lr(name) * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            param = getattr(scene, name)
            param[allowed] -= step[allowed]

    def keep_rows(self, keep):
        for d in (self.m, self.v):
            for k in d:
                d[k] = d[k][keep]

    def append_rows(self, k: int):
        for d in (self.m, self.v):
            for name in d:
                shape = (k,) + d[name].shape[1:]
                d[name] = np.concatenate([d[name], np.zeros(shape)], axis=0)


@dataclass
class StepReport:
    step: int
    loss_edit: float
    anchor: dict
    n_gaussians: int
    round_k: int
    densified: bool = False

    def to_json(self) -> dict:
        out = {"step": self.step, "L_edit": self.loss_edit}
        for name, key in REPORT_KEYS.items():
            out[f"L_anchor_{key}"] = self.anchor.get(name, 0.0)
        out["n_gaussians"] = self.n_gaussians
        out["round"] = self.round_k
        return out


class EditSession:
    """One optimization run over a scene under a guidance backend."""

    def __init__(self, scene: GaussianScene, guidance, cameras,
                 config: EditConfig | None = None, prompt: str = "",
                 masks: dict[str, np.ndarray] | None = None):
        if not cameras:
            raise ValidationError("session needs at least one camera")
        self.scene = scene
        self.guidance = guidance
        self.cameras = list(cameras)
        self.config = config or EditConfig()
        self.prompt = prompt
        self.masks = masks or {}
        self.schedule = AnchorSchedule(self.config.schedule)
        self.extent = scene.extent()
        self.optimizer = Adam(self.config.optimizer, scene.n,
                              scene.sh.shape, self.extent)
        self.rng = np.random.default_rng(self.config.seed)
        self.round_k = 0
        self.step_count = 0
        self.steps_since_densify = 0
        self.grad_accum = np.zeros(scene.n)
        # stable per-row identity across densify/prune, for analysis tools
        self.row_ids = np.arange(scene.n, dtype=np.int64)
        self._next_id = scene.n
        if self.config.restrict_label is not None:
            scene.label_column(self.config.restrict_label)  # validate now
        scene.snapshot_anchors()

    # -- gating ----------------------------------------------------------

    def allowed_rows(self) -> np.ndarray:
        if self.config.restrict_label is None:
            return np.ones(self.scene.n, dtype=bool)
        return self.scene.label_column(self.config.restrict_label)

    # -- one optimization step --------------------------------------------

    def edit_step(self) -> StepReport:
        cfg = self.config
        cam = self.cameras[int(self.rng.integers(len(self.cameras)))]
        labels_only = cfg.restrict_label if (
            cfg.restrict_label is not None and cfg.isolate_render) else None
        out = render(self.scene, cam, cfg.render, labels_only=labels_only)
        req = build_request(out.color, cam.cam_id, self.prompt,
                            self.step_count, self.masks.get(cam.cam_id))
        try:
            resp = validate_response(req, self.guidance.guide(req))
        except Exception as exc:
            raise type(exc)(
                f"step {self.step_count}, camera '{cam.cam_id}': {exc}") \
                from exc

        grads = render_backward(self.scene, cam, out,
                                resp.grad.astype(np.float64))
        self.grad_accum += grads["mean2d_norm"]

        anchor_vals, _ = anchor_loss(self.scene, self.schedule)
        a_grads = anchor_gradients(self.scene, self.schedule)
        allowed = self.allowed_rows()
        for name in PARAM_NAMES:
            g = grads[name]
            g += a_grads[name]
            g[~allowed] = 0.0
        self.optimizer.apply(self.scene, grads, allowed)

        self.step_count += 1
        self.steps_since_densify += 1
        densified = False
        if cfg.densify.interval > 0 and \
                self.step_count % cfg.densify.interval == 0:
            self.densify_top_percent()
            self.prune()
            densified = True
        return StepReport(self.step_count, resp.loss, anchor_vals,
                          self.scene.n, self.round_k, densified)

    def run(self, steps: int | None = None):
        for _ in range(steps if steps is not None else self.config.steps):
            yield self.edit_step()

    # -- densify / prune ---------------------------------------------------

    def eligible_rows(self) -> np.ndarray:
        return self.allowed_rows()

    def densify_top_percent(self) -> None:
        """Split/clone the top-k% of eligible rows by accumulated screen
        position-gradient norm; open a new generation."""
        if self.steps_since_densify == 0:
            raise ValidationError("densify called with no gradient statistics")
        cfg = self.config.densify
        scene = self.scene
        eligible = np.nonzero(self.eligible_rows())[0]
        k_count = math.ceil(cfg.top_percent / 100.0 * eligible.size)
        self.round_k += 1
        if k_count > 0 and eligible.size > 0:
            selected = select_top_percent(self.grad_accum, eligible, k_count)
            self._split_or_clone(selected)
        self.schedule.grow()
        scene.snapshot_anchors()
        self.grad_accum = np.zeros(scene.n)
        self.steps_since_densify = 0

    def _split_or_clone(self, selected: np.ndarray) -> None:
        scene = self.scene
        cfg = self.config.densify
        scales = np.exp(scene.log_scales[selected])
        big = scales.max(axis=1) > cfg.percent_dense * self.extent
        split_parents = selected[big]
        clone_parents = selected[~big]

        new_rows = {name: [] for name in PARAM_NAMES}
        new_parent = []

        for p in clone_parents:
            for name in PARAM_NAMES:
                new_rows[name].append(getattr(scene, name)[p].copy())
            new_parent.append(p)
        for p in split_parents:
            from .scene.gaussians import quat_to_rotmat
            R = quat_to_rotmat(scene.rotations[p][None])[0]
            s = np.exp(scene.log_scales[p])
            for _ in range(2):
                offset = R @ (self.rng.normal(0.0, 1.0, 3) * s)
                new_rows["positions"].append(scene.positions[p] + offset)
                new_rows["log_scales"].append(
                    scene.log_scales[p] - np.log(cfg.split_scale_divisor))
                new_rows["rotations"].append(scene.rotations[p].copy())
                new_rows["opacities"].append(scene.opacities[p])
                new_rows["sh"].append(scene.sh[p].copy())
                new_parent.append(p)

        n_new = len(new_parent)
        if n_new:
            label_rows = scene.label_matrix[new_parent] if scene.label_ids \
                else np.zeros((n_new, 0), dtype=bool)
            scene.append_rows(
                np.asarray(new_rows["positions"]).reshape(n_new, 3),
                np.asarray(new_rows["log_scales"]).reshape(n_new, 3),
                np.asarray(new_rows["rotations"]).reshape(n_new, 4),
                np.asarray(new_rows["opacities"]).reshape(n_new),
                np.asarray(new_rows["sh"]).reshape((n_new,) + scene.sh.shape[1:]),
                np.full(n_new, self.round_k, dtype=np.int32),
                label_rows)
            self.optimizer.append_rows(n_new)
            self.grad_accum = np.concatenate([self.grad_accum, np.zeros(n_new)])
            self.row_ids = np.concatenate([
                self.row_ids,
                np.arange(self._next_id, self._next_id + n_new)])
            self._next_id += n_new
            # inherit_labels is the single authority for label/generation rows
            child_base = scene.n - n_new
            for i, p in enumerate(new_parent):
                inherit_labels(scene, p, np.array([child_base + i]), self.round_k)

        if split_parents.size:
            keep = np.ones(scene.n, dtype=bool)
            keep[split_parents] = False
            scene.keep_rows(keep)
            self.optimizer.keep_rows(keep)
            self.grad_accum = self.grad_accum[keep]
            self.row_ids = self.row_ids[keep]

    def prune(self) -> None:
        """Drop rows whose activated opacity sits below the floor,
        restricted to the traced label when one is set."""
        scene = self.scene
        low = sigmoid(scene.opacities) < self.config.densify.prune_opacity
        if self.config.restrict_label is not None:
            low &= scene.label_column(self.config.restrict_label)
        if not low.any():
            return
        keep = ~low
        scene.keep_rows(keep)
        self.optimizer.keep_rows(keep)
        self.grad_accum = self.grad_accum[keep]
        self.row_ids = self.row_ids[keep]


def select_top_percent(stat: np.ndarray, eligible: np.ndarray,
                       k_count: int) -> np.ndarray:
    """Indices of the k_count eligible rows with the largest statistic;
    ties at the cutoff go to the lower index."""
    sub = stat[eligible]
    order = np.lexsort((eligible, -sub))
    return np.sort(eligible[order[:k_count]])
