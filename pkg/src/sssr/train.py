"""Two-phase scheduled training, the Adam optimizer, and evaluation loops.

Phase 1 trains the three unfolded solvers jointly under a stage-wise L1 loss
whose per-module weights follow a piecewise-constant schedule.  Phase 2
freezes that backbone and trains only the attention post-processor on the L1
error of the final output.  Both phases keep the parameter snapshot with the
best validation PSNR.  Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .metrics import evaluate_cube, psnr
from .pipeline import Pipeline
from .tensor import Tensor


@dataclass
class TrainSchedule:
    """Loss weights per epoch interval [0, e1), [e1, e2), [e2, inf)."""

    alpha_sr: tuple = (2.0, 0.5, 0.0)
    alpha_ssr: tuple = (1.0, 1.0, 0.5)
    alpha_fus: tuple = (0.5, 1.0, 1.0)
    change_points: tuple = (300, 600)
    phase1_epochs: int = 200
    phase2_epochs: int = 15
    learning_rate: float = 1e-4

    @staticmethod
    def from_settings(t) -> "TrainSchedule":
        return TrainSchedule(alpha_sr=t.alpha_sr, alpha_ssr=t.alpha_ssr,
                             alpha_fus=t.alpha_fus,
                             change_points=t.alpha_change_points,
                             phase1_epochs=t.phase1_epochs,
                             phase2_epochs=t.phase2_epochs,
                             learning_rate=t.learning_rate)


def alpha_at_epoch(schedule: TrainSchedule, epoch: int):
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    e1, e2 = schedule.change_points
    slot = 0 if epoch < e1 else (1 if epoch < e2 else 2)
    return (schedule.alpha_sr[slot], schedule.alpha_ssr[slot],
            schedule.alpha_fus[slot])


def loss_phase1(sr_stages, ssr_stages, fus_stages, F, g, G, alphas) -> Tensor:
    """Stage-wise weighted L1: final fused error plus per-module stage sums."""
    k = len(sr_stages)
    if len(ssr_stages) != k or len(fus_stages) != k:
        raise T.ShapeError("per-stage lists must share the stage count")
    a_sr, a_ssr, a_fus = alphas
    F, g, G = T.as_tensor(F), T.as_tensor(g), T.as_tensor(G)
    total = T.l1_loss(fus_stages[-1], G)
    if a_sr != 0.0:
        for u in sr_stages:
            total = T.add(total, T.mul(T.l1_loss(u, F), a_sr / k))
    if a_ssr != 0.0:
        for u in ssr_stages:
            total = T.add(total, T.mul(T.l1_loss(u, g), a_ssr / k))
    if a_fus != 0.0:
        for u in fus_stages:
            total = T.add(total, T.mul(T.l1_loss(u, G), a_fus / k))
    return total


class NonFiniteGradient(RuntimeError):
    """A parameter gradient contained NaN or infinity."""


class Adam:
    """Standard bias-corrected Adam over (path, tensor) pairs.

    Parameters without a gradient are skipped (e.g. the cluster assigner,
    whose logits sit behind a hard argmax).  Raises ``NonFiniteGradient``
    naming the parameter when a gradient is not finite.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {path: np.zeros_like(p.data) for path, p in self.params}
        self.v = {path: np.zeros_like(p.data) for path, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for path, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NonFiniteGradient(path)
            m = self.m[path] = self.beta1 * self.m[path] + (1 - self.beta1) * g
            v = self.v[path] = self.beta2 * self.v[path] + (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        for path in self.m:
            self.m[path] = np.asarray(state["m"][path], dtype=np.float32)
            self.v[path] = np.asarray(state["v"][path], dtype=np.float32)


def snapshot_params(model) -> dict:
    return {path: t.data.copy() for path, t in model.named_params()}


def restore_params(model, snapshot: dict):
    for path, t in model.named_params():
        t.data = snapshot[path].copy()


def validation_psnr(model: Pipeline, samples, postprocess: bool) -> float:
    """Mean PSNR of clipped reconstructions against the reference cubes."""
    vals = [psnr(model.reconstruct(s["f"], postprocess=postprocess), s["G"])
            for s in samples]
    return float(np.mean(vals))


@dataclass
class PhaseResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_psnr: float = float("-inf")
    best_params: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""
    adam: Adam | None = None
    rng: np.random.Generator | None = None


def train_phase1(train_samples, val_samples, model: Pipeline,
                 schedule: TrainSchedule, seed: int, *, epochs: int | None = None,
                 start_epoch: int = 0, adam: Adam | None = None,
                 rng: np.random.Generator | None = None,
                 progress=None) -> PhaseResult:
    """Joint training of the three solvers (no post-processing applied).

    Keeps the snapshot with the best validation PSNR; a non-finite loss or
    gradient aborts with the last good snapshot.  Resume by passing the saved
    ``adam``/``rng`` state and ``start_epoch``.
    """
    epochs = schedule.phase1_epochs if epochs is None else epochs
    params = model.trainable_params()
    if adam is None:
        adam = Adam(params, schedule.learning_rate)
    if rng is None:
        rng = np.random.default_rng([seed, 2])

    result = PhaseResult(adam=adam, rng=rng)
    result.best_params = snapshot_params(model)
    if epochs <= start_epoch:
        result.best_val_psnr = validation_psnr(model, val_samples, postprocess=False)
        result.best_epoch = start_epoch - 1
        return result

    for epoch in range(start_epoch, epochs):
        alphas = alpha_at_epoch(schedule, epoch)
        order = rng.permutation(len(train_samples))
        losses = []
        for i in order:
            sample = train_samples[int(i)]
            out = model.forward(sample["f"])
            loss = loss_phase1(out["sr_stages"], out["ssr_stages"],
                               out["fus_stages"], sample["F"], sample["g"],
                               sample["G"], alphas)
            value = float(loss.data)
            if not np.isfinite(value):
                restore_params(model, result.best_params)
                result.aborted = True
                result.abort_reason = f"non-finite loss at epoch {epoch}"
                return result
            adam.zero_grad()
            loss.backward()
            try:
                adam.step()
            except NonFiniteGradient as exc:
                restore_params(model, result.best_params)
                result.aborted = True
                result.abort_reason = f"non-finite gradient in {exc} at epoch {epoch}"
                return result
            losses.append(value)
        val = validation_psnr(model, val_samples, postprocess=False)
        result.history.append({
            "epoch": epoch, "train_loss": float(np.mean(losses)),
            "val_psnr": val, "alpha_sr": alphas[0], "alpha_ssr": alphas[1],
            "alpha_fus": alphas[2],
        })
        if val > result.best_val_psnr:
            result.best_val_psnr = val
            result.best_epoch = epoch
            result.best_params = snapshot_params(model)
        if progress is not None:
            progress(result.history[-1])
    return result


def train_phase2(train_samples, val_samples, model: Pipeline,
                 schedule: TrainSchedule, seed: int, *,
                 epochs: int | None = None, progress=None) -> PhaseResult:
    """Post-processor training against frozen backbone outputs.

    The backbone never receives gradients, so its fused outputs are computed
    once per sample.  The initial (identity) post-processor participates in
    best-checkpoint selection, so the returned snapshot is never worse on
    validation than the phase-1 model.
    """
    epochs = schedule.phase2_epochs if epochs is None else epochs
    with T.no_grad():
        fused_train = [model.forward(s["f"])["u_fus"].data for s in train_samples]
        fused_val = [model.forward(s["f"])["u_fus"].data for s in val_samples]

    def val_psnr() -> float:
        with T.no_grad():
            vals = [psnr(np.clip(model.post(Tensor(u)).data, 0, 1), s["G"])
                    for u, s in zip(fused_val, val_samples)]
        return float(np.mean(vals))

    params = [(f"post.{p}", t) for p, t in model.post.named_params()
              if t.requires_grad]
    adam = Adam(params, schedule.learning_rate)
    rng = np.random.default_rng([seed, 4])

    result = PhaseResult(adam=adam, rng=rng)
    result.best_val_psnr = val_psnr()
    result.best_epoch = -1
    result.best_params = snapshot_params(model)

    for epoch in range(epochs):
        order = rng.permutation(len(train_samples))
        losses = []
        for i in order:
            sample = train_samples[int(i)]
            out = model.post(Tensor(fused_train[int(i)]))
            loss = T.l1_loss(out, Tensor(np.asarray(sample["G"], np.float32)))
            value = float(loss.data)
            if not np.isfinite(value):
                restore_params(model, result.best_params)
                result.aborted = True
                result.abort_reason = f"non-finite loss at epoch {epoch}"
                return result
            adam.zero_grad()
            loss.backward()
            try:
                adam.step()
            except NonFiniteGradient as exc:
                restore_params(model, result.best_params)
                result.aborted = True
                result.abort_reason = f"non-finite gradient in {exc} at epoch {epoch}"
                return result
            losses.append(value)
        val = val_psnr()
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                               "val_psnr": val})
        if val > result.best_val_psnr:
            result.best_val_psnr = val
            result.best_epoch = epoch
            result.best_params = snapshot_params(model)
        if progress is not None:
            progress(result.history[-1])
    return result


def evaluate_model(model: Pipeline, samples, s: int, postprocess: bool) -> list:
    """Per-image metric rows for a list of samples."""
    rows = []
    for sample in samples:
        rec = model.reconstruct(sample["f"], postprocess=postprocess)
        rows.append(evaluate_cube(rec, sample["G"], s, sample["id"]))
    return rows
