"""Fit a DeepONet Hamiltonian to trajectory data with Adam.

Two objectives are available:

* ``dynamics`` (default): residual of Hamilton's equations
  ``du/dt = dH/du_t``, ``du_t/dt = -dH/du``, with the variational
  derivatives obtained from the autodiff gradient through a Gram solve.
* ``density``: direct regression of the density on ``(u_x^2 + u_t^2)/2``,
  usable only when the target density is known.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor
from .basis import GramMatrix, gram_matrix
from .deeponet import (DeepONetModel, QuadratureRule, bind, branch_input, density, input_gradient_on_tape,
                       save_checkpoint, trapezoid_rule)
from .wave_data import Dataset, Trajectory

log = logging.getLogger(__name__)

LOSS_MODES = ("dynamics", "density")


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: np.ndarray, param_norms: list[float]):
        self.epoch = epoch
        self.batch = batch
        self.param_norms = param_norms
        super().__init__(f"non-finite loss at epoch {epoch}; batch sample indices {batch[:8].tolist()}...; "
                         f"parameter norms {[round(n, 4) for n in param_norms]}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 2000
    batch_size: int = 64
    loss_mode: str = "dynamics"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("Adam moments need 0 <= beta < 1 and eps > 0")
        return self


@dataclass
class TrainReport:
    losses: list[float]
    wall_ms: list[float]
    start_step: int = 0
    checkpoint: Path | None = None

    @property
    def steps(self) -> int:
        return len(self.losses)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

def _fd_time(v: np.ndarray, j: int, dt: float) -> np.ndarray:
    n = v.shape[0]
    if j < 0 or j >= n:
        raise IndexError(f"time index {j} outside 0..{n - 1}")
    if j == 0:
        return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    if j == n - 1:
        return (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    return (v[j + 1] - v[j - 1]) / (2.0 * dt)


def time_derivatives(traj: Trajectory, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-order finite-difference time derivatives of ``u`` and ``u_t`` at index ``j``."""
    if traj.n_times < 3:
        raise ValueError(f"need at least 3 time levels for derivatives, got {traj.n_times}")
    return _fd_time(traj.u, j, traj.dt), _fd_time(traj.ut, j, traj.dt)


def all_time_derivatives(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    if traj.n_times < 3:
        raise ValueError(f"need at least 3 time levels for derivatives, got {traj.n_times}")
    out = []
    for v in (traj.u, traj.ut):
        d = np.empty_like(v)
        d[1:-1] = (v[2:] - v[:-2]) / (2.0 * traj.dt)
        d[0] = _fd_time(v, 0, traj.dt)
        d[-1] = _fd_time(v, v.shape[0] - 1, traj.dt)
        out.append(d)
    return out[0], out[1]


@dataclass
class SampleBank:
    """Flattened (trajectory, interior time) samples with their targets."""

    u: np.ndarray
    ut: np.ndarray
    du: np.ndarray
    dut: np.ndarray
    energy_density: np.ndarray

    def __len__(self):
        return self.u.shape[0]

    def take(self, idx) -> "SampleBank":
        return SampleBank(self.u[idx], self.ut[idx], self.du[idx], self.dut[idx], self.energy_density[idx])


def sample_bank(dataset: Dataset) -> SampleBank:
    parts = {k: [] for k in ("u", "ut", "du", "dut", "e")}
    for tr in dataset.trajectories:
        du, dut = all_time_derivatives(tr)
        inner = slice(1, tr.n_times - 1)
        parts["u"].append(tr.u[inner])
        parts["ut"].append(tr.ut[inner])
        parts["du"].append(du[inner])
        parts["dut"].append(dut[inner])
        parts["e"].append(0.5 * (tr.ux[inner] ** 2 + tr.ut[inner] ** 2))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return SampleBank(cat["u"], cat["ut"], cat["du"], cat["dut"], cat["e"])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def learned_field_on_tape(model: DeepONetModel, gram: GramMatrix, u, ut, rule: QuadratureRule,
                          tape: Tape) -> tuple[Tensor, Tensor]:
    """``(dH/du_t, -dH/du)`` per row, differentiable in the model parameters."""
    n = gram.n
    bound = bind(model, tape)
    g = input_gradient_on_tape(bound, branch_input(tape, u, ut), rule)
    dh_du = tape.sym_apply(g[:, :n], gram.solve)
    dh_dut = tape.sym_apply(g[:, n:], gram.solve)
    return dh_dut, -dh_du


def residual_loss(f_u, f_ut, du, dut, h: float) -> float:
    """Numeric form of the dynamics loss for any vector field ``(f_u, f_ut)``."""
    r_u = np.atleast_2d(du) - np.atleast_2d(f_u)
    r_ut = np.atleast_2d(dut) - np.atleast_2d(f_ut)
    return float(h * (np.sum(r_u ** 2) + np.sum(r_ut ** 2)) / r_u.shape[0])


def dynamics_loss(model: DeepONetModel, gram: GramMatrix, batch: SampleBank, rule: QuadratureRule,
                  tape: Tape | None = None) -> Tensor:
    """Mean over the batch of ``h * (|du - dH/du_t|^2 + |du_t + dH/du|^2)``."""
    if len(batch) == 0:
        raise ValueError("dynamics_loss: empty batch")
    tape = tape or Tape()
    f_u, f_ut = learned_field_on_tape(model, gram, batch.u, batch.ut, rule, tape)
    r_u = tape.constant(batch.du) - f_u
    r_ut = tape.constant(batch.dut) - f_ut
    return ((r_u * r_u).sum() + (r_ut * r_ut).sum()) * (gram.basis.h / len(batch))


def density_loss(model: DeepONetModel, states: tuple[np.ndarray, np.ndarray], y, targets,
                 tape: Tape | None = None) -> Tensor:
    """Mean squared error between the density at ``y`` and ``targets`` of shape (B, M)."""
    u, ut = (np.atleast_2d(s) for s in states)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    y = np.atleast_1d(y)
    if targets.shape != (u.shape[0], y.size):
        raise ValueError(f"density_loss: targets {targets.shape} != (states, points) = {(u.shape[0], y.size)}")
    tape = tape or Tape()
    r = density(model, u, ut, y, tape) - tape.constant(targets)
    return (r * r).sum() * (1.0 / targets.size)


def batch_loss(model, gram, batch: SampleBank, rule, mode: str, tape: Tape | None = None) -> Tensor:
    if mode == "dynamics":
        return dynamics_loss(model, gram, batch, rule, tape)
    return density_loss(model, (batch.u, batch.ut), rule.nodes, batch.energy_density, tape)


def dataset_loss(model, gram, bank: SampleBank, rule, mode: str = "dynamics", chunk: int = 2048) -> float:
    """Loss averaged over every sample in ``bank`` (forward only)."""
    total = 0.0
    for start in range(0, len(bank), chunk):
        part = bank.take(slice(start, start + chunk))
        total += float(batch_loss(model, gram, part, rule, mode).value) * len(part)
    return total / len(bank)


# ---------------------------------------------------------------------------
# optimizer and loop
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps))
        return out

    def state(self) -> dict[str, np.ndarray]:
        d = {f"adam_m_{k:03d}": m for k, m in enumerate(self.m)}
        d.update({f"adam_v_{k:03d}": v for k, v in enumerate(self.v)})
        return d

    def load_state(self, arrays: dict[str, np.ndarray], t: int):
        self.m = [arrays[f"adam_m_{k:03d}"].copy() for k in range(len(self.m))]
        self.v = [arrays[f"adam_v_{k:03d}"].copy() for k in range(len(self.v))]
        self.t = int(t)


def batch_indices(seed: int, step: int, n_samples: int, batch_size: int) -> np.ndarray:
    """Batch order depends only on (seed, step), so resumed runs replay exactly."""
    return np.random.default_rng([seed, step]).integers(0, n_samples, size=batch_size)


def loss_and_grads(model, gram, batch, rule, mode):
    tape = Tape()
    loss = batch_loss(model, gram, batch, rule, mode, tape)
    grads = tape.backward(loss)
    bound = bind(model, tape)
    return float(loss.value), [grads[p] for p in bound.params]


def train(model: DeepONetModel, dataset: Dataset, config: TrainConfig, *,
          gram: GramMatrix | None = None, rule: QuadratureRule | None = None,
          log_path=None, checkpoint_path=None, resume: dict | None = None,
          checkpoint_meta: dict | None = None) -> tuple[DeepONetModel, TrainReport]:
    """Run ``config.epochs`` Adam steps (one batch each).

    ``resume`` is ``{"step": int, "adam": arrays}`` taken from a checkpoint; the
    step counter, Adam moments and batch order continue where they stopped.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    if dataset.basis.n_points != model.n_points:
        raise ValueError(f"model grid N={model.n_points} does not match dataset N={dataset.basis.n_points}")
    gram = gram or gram_matrix(dataset.basis)
    rule = rule or trapezoid_rule(dataset.basis)
    bank = sample_bank(dataset)

    opt = Adam(model.parameters(), config.lr, config.beta1, config.beta2, config.eps)
    start = 0
    if resume is not None:
        start = int(resume["step"])
        opt.load_state(resume["adam"], start)

    log_file = writer = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = resume is None or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_file)
        if fresh:
            if checkpoint_meta and "config_hash" in checkpoint_meta:
                log_file.write(f"# config_hash: {checkpoint_meta['config_hash']}\n")
            writer.writerow(["epoch", "loss", "wall_ms"])

    def write_checkpoint(step: int):
        meta = dict(checkpoint_meta or {})
        meta.update({"step": step, "loss_mode": config.loss_mode})
        save_checkpoint(checkpoint_path, model, meta, opt.state())

    losses, walls = [], []
    t0 = time.perf_counter()
    try:
        for step in range(start, start + config.epochs):
            idx = batch_indices(config.seed, step, len(bank), config.batch_size)
            loss, grads = loss_and_grads(model, gram, bank.take(idx), rule, config.loss_mode)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLossError(step, idx, [float(np.linalg.norm(p)) for p in model.parameters()])
            model = model.with_parameters(opt.step(model.parameters(), grads))
            wall = 1e3 * (time.perf_counter() - t0)
            losses.append(loss)
            walls.append(wall)
            if writer is not None:
                writer.writerow([step, repr(loss), f"{wall:.3f}"])
            if checkpoint_path is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                write_checkpoint(step + 1)
            if step % 200 == 0:
                log.debug("step %d loss %.6g", step, loss)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        write_checkpoint(start + config.epochs)
    return model, TrainReport(losses, walls, start, Path(checkpoint_path) if checkpoint_path else None)
