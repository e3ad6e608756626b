"""Exact trajectories of the periodic 1-D wave equation u_tt = u_xx.

Initial displacement is a truncated Fourier series
``f(x) = sum_k a_k sin(2 pi k x) + b_k cos(2 pi k x)`` with zero initial
velocity, so the d'Alembert solution ``u = (f(x+t) + f(x-t)) / 2`` is exact
everywhere; no time stepping is involved.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import container, kernels
from .basis import NodalBasis

DATASET_KIND = "wave-dataset"


@dataclass(frozen=True)
class InitialCondition:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if a.shape != b.shape or a.ndim != 1 or a.size < 1:
            raise ValueError("sine and cosine coefficient arrays must be 1-D, non-empty and equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("Fourier coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def modes(self) -> int:
        return self.a.size

    def _phases(self, x):
        x = np.asarray(x, dtype=np.float64)
        wk = 2.0 * np.pi * np.arange(1, self.modes + 1)
        return wk, np.multiply.outer(x, wk)

    def f(self, x) -> np.ndarray:
        _, ph = self._phases(x)
        return np.sin(ph) @ self.a + np.cos(ph) @ self.b

    def df(self, x) -> np.ndarray:
        wk, ph = self._phases(x)
        return np.cos(ph) @ (wk * self.a) - np.sin(ph) @ (wk * self.b)

    def d2f(self, x) -> np.ndarray:
        wk, ph = self._phases(x)
        return -(np.sin(ph) @ (wk ** 2 * self.a) + np.cos(ph) @ (wk ** 2 * self.b))


def sample_initial(seed, modes: int, amp: float = 1.0) -> InitialCondition:
    """Coefficients uniform on ``[-amp/k, amp/k]``; ``seed`` may be an int,
    a ``SeedSequence`` or a ``Generator``."""
    if modes < 1:
        raise ValueError(f"mode count must be >= 1, got {modes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scale = amp / np.arange(1, modes + 1)
    a = rng.uniform(-scale, scale)
    b = rng.uniform(-scale, scale)
    return InitialCondition(a, b)


def dalembert(ic: InitialCondition, t, x) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    u = 0.5 * (ic.f(x + t) + ic.f(x - t))
    ut = 0.5 * (ic.df(x + t) - ic.df(x - t))
    return u, ut


def dalembert_ux(ic: InitialCondition, t, x) -> np.ndarray:
    return 0.5 * (ic.df(np.asarray(x) + t) + ic.df(np.asarray(x) - t))


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    ic: InitialCondition
    ux: np.ndarray | None = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def n_times(self) -> int:
        return self.t.size


def trajectory(ic: InitialCondition, basis: NodalBasis, nt: int, t_max: float) -> Trajectory:
    t = time_lattice(nt, t_max)
    u, ut, ux = kernels.dalembert_lattice(ic.a, ic.b, t, basis.nodes)
    return Trajectory(t, basis.nodes, u, ut, ic, ux)


def time_lattice(nt: int, t_max: float) -> np.ndarray:
    return t_max * np.arange(nt + 1) / nt


def exact_energy(traj: Trajectory) -> np.ndarray:
    """Trapezoid quadrature of ``(u_x^2 + u_t^2)/2`` with analytic ``u_x``; one value per time."""
    ux = traj.ux if traj.ux is not None else dalembert_ux(traj.ic, traj.t[:, None], traj.x[None, :])
    return traj.h * 0.5 * np.sum(ux ** 2 + traj.ut ** 2, axis=1)


@dataclass(frozen=True)
class DataConfig:
    n_traj: int = 100
    modes: int = 1
    amp: float = 0.1
    nx: int = 64
    nt: int = 100
    t_max: float = 2.0
    seed: int = 0

    def validate(self):
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.modes < 1:
            raise ValueError(f"modes must be >= 1, got {self.modes}")
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if not self.amp > 0:
            raise ValueError(f"amp must be positive, got {self.amp}")
        return self


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    basis: NodalBasis
    config: DataConfig
    config_hash: str = ""

    def __len__(self):
        return len(self.trajectories)

    @property
    def t(self) -> np.ndarray:
        return self.trajectories[0].t

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``u`` and ``u_t`` of shape (n_traj, nt + 1, N)."""
        return (np.stack([tr.u for tr in self.trajectories]),
                np.stack([tr.ut for tr in self.trajectories]))


def config_digest(cfg: DataConfig) -> str:
    raw = json.dumps(cfg.__dict__, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def generate(cfg: DataConfig, config_hash: str | None = None) -> Dataset:
    cfg.validate()
    basis = NodalBasis(cfg.nx)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_traj)
    trajs = [trajectory(sample_initial(np.random.default_rng(c), cfg.modes, cfg.amp), basis, cfg.nt, cfg.t_max)
             for c in children]
    return Dataset(trajs, basis, cfg, config_hash or config_digest(cfg))


def save_dataset(path, ds: Dataset):
    u, ut = ds.stacked()
    meta = {
        "config_hash": ds.config_hash,
        "n_traj": len(ds), "nx": ds.basis.n_points, "nt": ds.config.nt, "t_max": ds.config.t_max,
        "dt": float(ds.t[1] - ds.t[0]), "h": ds.basis.h, "domain": [ds.basis.x_lo, ds.basis.x_hi],
        "seed": ds.config.seed, "modes": ds.config.modes, "amp": ds.config.amp,
    }
    arrays = {
        "coef_sin": np.stack([tr.ic.a for tr in ds.trajectories]),
        "coef_cos": np.stack([tr.ic.b for tr in ds.trajectories]),
        "t": ds.t, "x": ds.basis.nodes, "u": u, "u_t": ut,
    }
    return container.write(path, DATASET_KIND, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = container.read(path, DATASET_KIND)
    cfg = DataConfig(meta["n_traj"], meta["modes"], meta["amp"], meta["nx"], meta["nt"], meta["t_max"], meta["seed"])
    basis = NodalBasis(meta["nx"], *meta["domain"])
    trajs = []
    for i in range(meta["n_traj"]):
        ic = InitialCondition(arrays["coef_sin"][i], arrays["coef_cos"][i])
        ux = kernels.dalembert_lattice(ic.a, ic.b, arrays["t"], arrays["x"])[2]
        trajs.append(Trajectory(arrays["t"], arrays["x"], arrays["u"][i], arrays["u_t"][i], ic, ux))
    return Dataset(trajs, basis, cfg, meta["config_hash"])
