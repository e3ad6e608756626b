"""Unstacked DeepONet for a Hamiltonian density.

The branch MLP reads the concatenated nodal values ``(u, u_t)`` (length 2N)
and returns coefficients ``c_k``; the trunk MLP reads a location ``y`` and
returns basis values ``psi_k(y)``.  The density is ``sum_k c_k psi_k(y)`` and
the Hamiltonian is its quadrature over the periodic grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import container
from .autodiff import Tape, Tensor
from .basis import GramMatrix, NodalBasis, variational_derivative


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("MLP needs one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (1, w.shape[1]):
                raise ValueError(f"layer {k}: bias shape {b.shape} does not match weight {w.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input size {w.shape[0]} != previous output {self.weights[k - 1].shape[1]}")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            x = np.tanh(x @ w + b)
        return x @ self.weights[-1] + self.biases[-1]


def _init_mlp(rng: np.random.Generator, sizes: list[int]) -> Mlp:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=(1, fan_out)))
    return Mlp(weights, biases)


@dataclass
class DeepONetModel:
    branch: Mlp
    trunk: Mlp
    n_points: int
    p: int
    hidden: int
    layers: int
    seed: int
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.branch.n_out != self.p or self.trunk.n_out != self.p:
            raise ValueError(f"branch/trunk outputs ({self.branch.n_out}, {self.trunk.n_out}) must both equal p={self.p}")
        if self.branch.n_in != 2 * self.n_points:
            raise ValueError(f"branch input {self.branch.n_in} != 2N = {2 * self.n_points}")
        if self.trunk.n_in != 1:
            raise ValueError("trunk takes a single coordinate")

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in canonical order (branch then trunk, W before b)."""
        out = []
        for net in (self.branch, self.trunk):
            for w, b in zip(net.weights, net.biases):
                out += [w, b]
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "DeepONetModel":
        params = [np.array(p, dtype=np.float64) for p in params]
        cur = self.parameters()
        if len(params) != len(cur) or any(a.shape != b.shape for a, b in zip(params, cur)):
            raise ValueError("parameter list does not match model layout")
        nb = 2 * len(self.branch.weights)
        branch = Mlp(params[0:nb:2], params[1:nb:2])
        trunk = Mlp(params[nb::2], params[nb + 1::2])
        return replace(self, branch=branch, trunk=trunk)

    def copy(self) -> "DeepONetModel":
        return self.with_parameters(self.parameters())

    @property
    def basis(self) -> NodalBasis:
        return NodalBasis(self.n_points, self.domain[0], self.domain[1])


def init_model(n_points: int, p: int, hidden: int, layers: int, seed: int,
               domain: tuple[float, float] = (0.0, 1.0), zero_final: bool = False) -> DeepONetModel:
    """Initialize weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``layers`` counts hidden tanh layers in each network.
    """
    for name, v in (("n_points", n_points), ("p", p), ("hidden", hidden), ("layers", layers)):
        if int(v) < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    rng = np.random.default_rng(seed)
    branch = _init_mlp(rng, [2 * n_points] + [hidden] * layers + [p])
    trunk = _init_mlp(rng, [1] + [hidden] * layers + [p])
    if zero_final:
        branch.weights[-1][:] = 0.0
        branch.biases[-1][:] = 0.0
    return DeepONetModel(branch, trunk, int(n_points), int(p), int(hidden), int(layers), int(seed),
                         (float(domain[0]), float(domain[1])))


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("quadrature nodes and weights must be matching 1-D arrays")
        if not np.all(self.weights > 0):
            raise ValueError("quadrature weights must be positive")


def trapezoid_rule(basis: NodalBasis) -> QuadratureRule:
    """Composite trapezoid on the periodic grid nodes (all weights equal h)."""
    return QuadratureRule(basis.nodes.copy(), np.full(basis.n_points, basis.h))


# ---------------------------------------------------------------------------
# tape construction
# ---------------------------------------------------------------------------

@dataclass
class BoundModel:
    model: DeepONetModel
    branch_w: list[Tensor]
    branch_b: list[Tensor]
    trunk_w: list[Tensor]
    trunk_b: list[Tensor]
    params: list[Tensor] = field(default_factory=list)


def bind(model: DeepONetModel, tape: Tape) -> BoundModel:
    """Parameters of ``model`` as leaves on ``tape`` (created once per tape)."""
    key = ("deeponet", id(model))
    hit = tape.cache.get(key)
    if hit is not None and hit.model is model:
        return hit
    bw = [tape.tensor(w) for w in model.branch.weights]
    bb = [tape.tensor(b) for b in model.branch.biases]
    tw = [tape.tensor(w) for w in model.trunk.weights]
    tb = [tape.tensor(b) for b in model.trunk.biases]
    params = []
    for ws, bs in ((bw, bb), (tw, tb)):
        for w, b in zip(ws, bs):
            params += [w, b]
    bound = BoundModel(model, bw, bb, tw, tb, params)
    tape.cache[key] = bound
    return bound


def _mlp_on_tape(tape: Tape, ws: list[Tensor], bs: list[Tensor], x: Tensor):
    ones = tape.constant(np.ones((x.shape[0], 1)))
    acts = [x]
    for w, b in zip(ws[:-1], bs[:-1]):
        acts.append((acts[-1] @ w + ones @ b).tanh())
    return acts[-1] @ ws[-1] + ones @ bs[-1], acts


def _as_rows(tape: Tape, v) -> Tensor:
    t = v if isinstance(v, Tensor) else tape.constant(v)
    if len(t.shape) == 1:
        t = t.reshape(1, t.shape[0])
    return t


def _tape_of(*vals) -> Tape:
    for v in vals:
        if isinstance(v, Tensor):
            return v.tape
    return Tape()


def branch_input(tape: Tape, u, ut) -> Tensor:
    """Branch input rows ``[u | u_t]`` of shape (B, 2N)."""
    return tape.concat([_as_rows(tape, u), _as_rows(tape, ut)], axis=1)


def trunk_features(bound: BoundModel, y) -> Tensor:
    tape = bound.branch_w[0].tape
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out, _ = _mlp_on_tape(tape, bound.trunk_w, bound.trunk_b, tape.constant(y.reshape(-1, 1)))
    return out


def _check_locations(model: DeepONetModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    lo, hi = model.domain
    if np.any(y < lo) or np.any(y > hi):
        raise ValueError(f"density location outside domain [{lo}, {hi}]")
    return y


def density(model: DeepONetModel, u, ut, y, tape: Tape | None = None) -> Tensor:
    """``H_NO(w)(y)`` on the tape.

    Shapes: one state and scalar ``y`` give a 0-d tensor; otherwise the result
    is (B, M) for B states and M locations, with singleton axes dropped for
    1-D states or scalar ``y``.
    """
    y = _check_locations(model, y)
    tape = tape or _tape_of(u, ut)
    bound = bind(model, tape)
    coeffs, _ = _mlp_on_tape(tape, bound.branch_w, bound.branch_b, branch_input(tape, u, ut))
    out = coeffs @ trunk_features(bound, y).T
    single = not isinstance(u, Tensor) and np.ndim(u) == 1 or isinstance(u, Tensor) and len(u.shape) == 1
    shape = (() if single else (coeffs.shape[0],)) + tuple(np.shape(y))
    return out.reshape(shape) if shape != out.shape else out


def _mean_trunk(bound: BoundModel, rule: QuadratureRule) -> Tensor:
    tape = bound.branch_w[0].tape
    q = tape.constant(rule.weights.reshape(1, -1))
    return q @ trunk_features(bound, rule.nodes)


def hamiltonian_rows(model: DeepONetModel, u, ut, rule: QuadratureRule, tape: Tape | None = None) -> Tensor:
    """Per-state quadrature of the density, shape (B, 1)."""
    tape = tape or _tape_of(u, ut)
    bound = bind(model, tape)
    coeffs, _ = _mlp_on_tape(tape, bound.branch_w, bound.branch_b, branch_input(tape, u, ut))
    return coeffs @ _mean_trunk(bound, rule).T


def hamiltonian(model: DeepONetModel, u, ut, rule: QuadratureRule, tape: Tape | None = None) -> Tensor:
    """Scalar ``sum_m weight_m H_NO(w)(y_m)`` (summed over states for a batch)."""
    return hamiltonian_rows(model, u, ut, rule, tape).sum()


def hamiltonian_values(model: DeepONetModel, u, ut, rule: QuadratureRule) -> np.ndarray:
    """Numeric per-state Hamiltonian without building a tape."""
    u = np.atleast_2d(u)
    ut = np.atleast_2d(ut)
    coeffs = model.branch(np.concatenate([u, ut], axis=1))
    psi_bar = rule.weights @ model.trunk(rule.nodes.reshape(-1, 1))
    return coeffs @ psi_bar


def functional_gradient(build: Callable[[Tape, Tensor, Tensor], Tensor], u, ut,
                        gram: GramMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Variational derivatives of a scalar functional built on a fresh tape.

    ``build(tape, U, UT)`` must return the scalar (summed over rows) from
    leaves ``U`` and ``UT`` holding nodal values.
    """
    tape = Tape()
    U = tape.tensor(u)
    UT = tape.tensor(ut)
    H = build(tape, U, UT)
    grads = tape.backward(H)
    return variational_derivative(grads[U], gram), variational_derivative(grads[UT], gram)


def grad_hamiltonian(model: DeepONetModel, u, ut, rule: QuadratureRule,
                     gram: GramMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``(dH/du, dH/du_t)`` of the learned Hamiltonian at nodal values."""
    return functional_gradient(lambda tape, U, UT: hamiltonian(model, U, UT, rule, tape), u, ut, gram)


def input_gradient_on_tape(bound: BoundModel, x: Tensor, rule: QuadratureRule) -> Tensor:
    """Euclidean gradient of each row's Hamiltonian with respect to its branch input.

    The reverse sweep through the branch network is written out as tape ops, so
    the result stays differentiable in the parameters (needed by the dynamics
    loss).  Returns a (B, 2N) tensor.
    """
    tape = x.tape
    _, acts = _mlp_on_tape(tape, bound.branch_w, bound.branch_b, x)
    ones = tape.constant(np.ones((x.shape[0], 1)))
    g = (ones @ _mean_trunk(bound, rule)) @ bound.branch_w[-1].T
    for k in range(len(bound.branch_w) - 2, -1, -1):
        a = acts[k + 1]
        g = (g * (1.0 - a * a)) @ bound.branch_w[k].T
    return g


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_KIND = "deeponet-checkpoint"


def save_checkpoint(path, model: DeepONetModel, meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None):
    header = {
        "n_points": model.n_points, "p": model.p, "hidden": model.hidden,
        "layers": model.layers, "seed": model.seed, "domain": list(model.domain),
    }
    header.update(meta or {})
    arrays = {f"param_{i:03d}": a for i, a in enumerate(model.parameters())}
    for name, a in (extra or {}).items():
        arrays[f"extra/{name}"] = a
    return container.write(path, CHECKPOINT_KIND, header, arrays)


def load_checkpoint(path) -> tuple[DeepONetModel, dict, dict[str, np.ndarray]]:
    header, arrays = container.read(path, CHECKPOINT_KIND)
    template = init_model(header["n_points"], header["p"], header["hidden"], header["layers"],
                          header["seed"], tuple(header["domain"]))
    params = [arrays[k] for k in sorted(k for k in arrays if k.startswith("param_"))]
    model = template.with_parameters(params)
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return model, header, extra
