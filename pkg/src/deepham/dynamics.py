"""Hamiltonian vector fields for w = (u, u_t) with J = [[0, I], [-I, 0]], time
integration and conservation diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import AutodiffError, Tape, Tensor
from .basis import GramMatrix, NodalBasis, gram_matrix, l2_inner
from .deeponet import DeepONetModel, QuadratureRule, functional_gradient, hamiltonian, hamiltonian_values, trapezoid_rule


class IntegrationError(RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"state became non-finite at step {step}")


def difference_matrix(basis: NodalBasis, stencil: str = "central") -> np.ndarray:
    """Periodic first-derivative matrix on the grid nodes."""
    n, h = basis.n_points, basis.h
    if stencil == "central":
        d = np.zeros((n, n))
        i = np.arange(n)
        d[i, (i + 1) % n] = 0.5 / h
        d[i, (i - 1) % n] = -0.5 / h
        return d
    if stencil == "spectral":
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
        if n % 2 == 0:
            k[n // 2] = 0.0
        return np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))
    raise ValueError(f"unknown stencil {stencil!r}")


@dataclass
class HamiltonianSystem:
    """A Hamiltonian on nodal values together with the machinery to differentiate it.

    ``model=None`` selects the exact wave Hamiltonian ``int (u_x^2 + u_t^2)/2``
    discretized with ``stencil`` and the trapezoid rule.  Its variational
    gradient is taken either through the autodiff + Gram pipeline
    (``gradient="ad"``) or directly as ``(-u_xx, u_t)`` (``"analytic"``).
    """

    basis: NodalBasis
    gram: GramMatrix
    rule: QuadratureRule
    model: DeepONetModel | None = None
    stencil: str = "central"
    gradient: str = "ad"

    def __post_init__(self):
        if self.gradient not in ("ad", "analytic"):
            raise ValueError(f"unknown gradient route {self.gradient!r}")
        if self.model is not None and self.model.n_points != self.basis.n_points:
            raise ValueError("model grid does not match the system grid")
        self._d = difference_matrix(self.basis, self.stencil)

    @property
    def source(self) -> str:
        return "learned" if self.model is not None else "exact"

    def _exact_on_tape(self, tape: Tape, U: Tensor, UT: Tensor) -> Tensor:
        ux = U @ tape.constant(self._d.T)
        return ((ux * ux).sum() + (UT * UT).sum()) * (0.5 * self.basis.h)

    def tape_hamiltonian(self, tape: Tape, U: Tensor, UT: Tensor) -> Tensor:
        if self.model is not None:
            return hamiltonian(self.model, U, UT, self.rule, tape)
        return self._exact_on_tape(tape, U, UT)

    def hamiltonian(self, u, ut) -> np.ndarray:
        """Hamiltonian value per state (last axis is space)."""
        u = np.asarray(u, dtype=np.float64)
        ut = np.asarray(ut, dtype=np.float64)
        if self.model is not None:
            flat = hamiltonian_values(self.model, u.reshape(-1, u.shape[-1]), ut.reshape(-1, u.shape[-1]), self.rule)
            return flat.reshape(u.shape[:-1])
        ux = u @ self._d.T
        return 0.5 * self.basis.h * np.sum(ux * ux + ut * ut, axis=-1)

    def variational_gradient(self, u, ut) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=np.float64)
        ut = np.asarray(ut, dtype=np.float64)
        if self.model is None and self.gradient == "analytic":
            if self.stencil == "central":
                uxx = u @ (self._d @ self._d).T
            else:
                uxx = self._second(u)
            return -uxx, ut.copy()
        return functional_gradient(self.tape_hamiltonian, u, ut, self.gram)

    def _second(self, u):
        n, h = self.basis.n_points, self.basis.h
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
        return np.real(np.fft.ifft(-(k ** 2) * np.fft.fft(u, axis=-1), axis=-1))


def exact_system(basis: NodalBasis, stencil: str = "central", gradient: str = "ad",
                 gram_mode: str = "exact") -> HamiltonianSystem:
    return HamiltonianSystem(basis, gram_matrix(basis, gram_mode), trapezoid_rule(basis), None, stencil, gradient)


def learned_system(model: DeepONetModel, gram_mode: str = "exact") -> HamiltonianSystem:
    basis = model.basis
    return HamiltonianSystem(basis, gram_matrix(basis, gram_mode), trapezoid_rule(basis), model)


def vector_field(sys: HamiltonianSystem, u, ut) -> tuple[np.ndarray, np.ndarray]:
    """``(dH/du_t, -dH/du)``."""
    dh_du, dh_dut = sys.variational_gradient(u, ut)
    return dh_dut, -dh_du


def skew_defect(sys: HamiltonianSystem, u, ut) -> float:
    """``<F(w), dH/dw>_{L2}`` relative to ``|F| |dH/dw|``; zero for a skew structure."""
    dh_du, dh_dut = sys.variational_gradient(u, ut)
    fu, fut = dh_dut, -dh_du
    pair = l2_inner(fu, dh_du, sys.gram) + l2_inner(fut, dh_dut, sys.gram)
    scale = np.sqrt((l2_inner(fu, fu, sys.gram) + l2_inner(fut, fut, sys.gram)) *
                    (l2_inner(dh_du, dh_du, sys.gram) + l2_inner(dh_dut, dh_dut, sys.gram)))
    return float(np.max(np.abs(pair) / np.maximum(scale, 1e-300)))


@dataclass
class RolloutReport:
    times: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    hamiltonian: np.ndarray
    ref_u: np.ndarray | None = None
    ref_ut: np.ndarray | None = None
    h_learned_on_true: np.ndarray | None = None
    h_true_on_learned: np.ndarray | None = None
    l2_error_u: np.ndarray | None = None
    l2_error_ut: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def relative_error(self) -> float:
        """Space-time relative L2 error of the full state against the reference."""
        num = np.sum((self.u - self.ref_u) ** 2) + np.sum((self.ut - self.ref_ut) ** 2)
        den = np.sum(self.ref_u ** 2) + np.sum(self.ref_ut ** 2)
        return float(np.sqrt(num / den))

    def to_csv(self, path, config_hash: str | None = None):
        cols = ["t", "l2_error_u", "l2_error_ut", "H_learned_on_true", "H_true_on_learned"]
        nan = np.full(self.times.size, np.nan)
        data = [self.times] + [nan if a is None else a for a in
                               (self.l2_error_u, self.l2_error_ut, self.h_learned_on_true, self.h_true_on_learned)]
        with open(path, "w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash: {config_hash}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([repr(float(v)) for v in row])
        return Path(path)


def _rk4(sys, u, ut, dt):
    k1u, k1v = vector_field(sys, u, ut)
    k2u, k2v = vector_field(sys, u + 0.5 * dt * k1u, ut + 0.5 * dt * k1v)
    k3u, k3v = vector_field(sys, u + 0.5 * dt * k2u, ut + 0.5 * dt * k2v)
    k4u, k4v = vector_field(sys, u + dt * k3u, ut + dt * k3v)
    return (u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
            ut + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))


def _leapfrog(sys, u, ut, dt):
    # kick-drift-kick; symplectic when H separates into potential(u) + kinetic(u_t)
    v_half = ut + 0.5 * dt * vector_field(sys, u, ut)[1]
    u_new = u + dt * vector_field(sys, u, v_half)[0]
    v_new = v_half + 0.5 * dt * vector_field(sys, u_new, v_half)[1]
    return u_new, v_new


STEPPERS = {"rk4": _rk4, "leapfrog": _leapfrog}


def integrate(sys: HamiltonianSystem, u0, ut0, dt: float, steps: int, method: str = "rk4") -> RolloutReport:
    """Fixed-step rollout; ``u0``/``ut0`` may carry leading batch axes."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    try:
        stepper = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integrator {method!r}; choose from {sorted(STEPPERS)}") from None
    u = np.array(u0, dtype=np.float64)
    ut = np.array(ut0, dtype=np.float64)
    us = np.empty((steps + 1,) + u.shape)
    uts = np.empty_like(us)
    us[0], uts[0] = u, ut
    for s in range(1, steps + 1):
        try:
            u, ut = stepper(sys, u, ut, dt)
        except AutodiffError:
            # a stage state overflowed before the step finished
            raise IntegrationError(s) from None
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(ut))):
            raise IntegrationError(s)
        us[s], uts[s] = u, ut
    times = dt * np.arange(steps + 1)
    return RolloutReport(times, us, uts, hamiltonian_series(sys, us, uts))


def hamiltonian_series(sys: HamiltonianSystem, u_snapshots, ut_snapshots) -> np.ndarray:
    return sys.hamiltonian(u_snapshots, ut_snapshots)


def compare(report: RolloutReport, ref_u, ref_ut, learned: HamiltonianSystem | None,
            truth: HamiltonianSystem) -> RolloutReport:
    """Attach the reference trajectory, error norms and cross-evaluated Hamiltonians.

    ``h_learned_on_true`` is reported relative to its initial value since a
    Hamiltonian learned from dynamics is fixed only up to a constant.
    """
    h = truth.basis.h
    report.ref_u = np.asarray(ref_u, dtype=np.float64)
    report.ref_ut = np.asarray(ref_ut, dtype=np.float64)
    report.l2_error_u = np.sqrt(h * np.sum((report.u - report.ref_u) ** 2, axis=-1))
    report.l2_error_ut = np.sqrt(h * np.sum((report.ut - report.ref_ut) ** 2, axis=-1))
    report.h_true_on_learned = hamiltonian_series(truth, report.u, report.ut)
    if learned is not None:
        series = hamiltonian_series(learned, report.ref_u, report.ref_ut)
        report.h_learned_on_true = series - series[0]
    return report
