"""Independent reference computations used to validate the autodiff, Gram and
variational-derivative paths: central finite differences, brute-force
quadrature of hat products, and random composite graphs over the full op set.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor
from .basis import NodalBasis, gram_matrix, l2_inner

_SPD4 = np.array([[4.0, 1.0, 0.0, 0.5],
                  [1.0, 3.0, 0.2, 0.0],
                  [0.0, 0.2, 2.0, 0.3],
                  [0.5, 0.0, 0.3, 5.0]])


def fd_gradient(f: Callable[[list[np.ndarray]], float], xs: list[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` with respect to every entry of ``xs``."""
    xs = [np.array(x, dtype=np.float64) for x in xs]
    out = []
    for k, x in enumerate(xs):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            orig = x[idx]
            x[idx] = orig + step
            fp = f(xs)
            x[idx] = orig - step
            fm = f(xs)
            x[idx] = orig
            g[idx] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(v) for v in a]) if isinstance(a, list) else np.ravel(a)
    b = np.concatenate([np.ravel(v) for v in b]) if isinstance(b, list) else np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def quadrature_gram(basis: NodalBasis, cells: int = 4096, order: int = 3) -> np.ndarray:
    """``int phi_i phi_j dx`` by composite Gauss-Legendre on ``cells`` equal cells.

    Hats are sampled through ``NodalBasis.hat``; with cells aligned to the
    grid the rule is exact for the piecewise-quadratic integrands.
    """
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(basis.x_lo, basis.x_hi, cells + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    wts = (half[:, None] * gw[None, :]).ravel()
    phi = np.stack([basis.hat(i, pts) for i in range(basis.n_points)])
    return (phi * wts) @ phi.T


# ---------------------------------------------------------------------------
# random composite graphs
# ---------------------------------------------------------------------------

LEAF_SHAPES = [(4,), (4,), (3, 4), (4, 3), ()]


def random_program(rng: np.random.Generator, n_ops: int = 12) -> list[tuple]:
    """A replayable list of instructions over the leaves in ``LEAF_SHAPES``."""
    shapes = list(LEAF_SHAPES)
    prog = []

    def pick(pred):
        cand = [i for i, s in enumerate(shapes) if pred(s)]
        return int(rng.choice(cand)) if cand else None

    kinds = ["tanh", "scale", "add", "mul", "matmul", "dot", "concat", "slice", "transpose",
             "sum", "sym", "reshape", "addscalar"]
    while len(prog) < n_ops:
        kind = kinds[int(rng.integers(len(kinds)))]
        i = pick(lambda s: True)
        s = shapes[i]
        if kind == "tanh":
            prog.append(("tanh", i)); shapes.append(s)
        elif kind == "scale":
            prog.append(("scale", i, float(rng.uniform(-2, 2)))); shapes.append(s)
        elif kind in ("add", "mul"):
            j = pick(lambda t: t == s)
            prog.append((kind, i, j)); shapes.append(s)
        elif kind == "addscalar":
            j = pick(lambda t: t == ())
            prog.append(("add", i, j)); shapes.append(s)
        elif kind == "matmul":
            i = pick(lambda t: len(t) == 2)
            j = pick(lambda t, c=shapes[i][1]: len(t) in (1, 2) and t[0] == c)
            if j is None:
                continue
            prog.append(("matmul", i, j)); shapes.append((shapes[i][0],) + shapes[j][1:])
        elif kind == "dot":
            i = pick(lambda t: len(t) == 1)
            j = pick(lambda t, r=shapes[i]: t == r)
            prog.append(("dot", i, j)); shapes.append(())
        elif kind == "concat":
            i = pick(lambda t: len(t) >= 1)
            j = pick(lambda t, r=shapes[i]: t[1:] == r[1:] and len(t) == len(r))
            prog.append(("concat", i, j)); shapes.append((shapes[i][0] + shapes[j][0],) + shapes[i][1:])
        elif kind == "slice":
            i = pick(lambda t: len(t) >= 1 and t[0] >= 2)
            prog.append(("slice", i)); shapes.append((shapes[i][0] - 1,) + shapes[i][1:])
        elif kind == "transpose":
            i = pick(lambda t: len(t) == 2)
            prog.append(("transpose", i)); shapes.append(shapes[i][::-1])
        elif kind == "sum":
            prog.append(("sum", i)); shapes.append(())
        elif kind == "sym":
            i = pick(lambda t: len(t) >= 1 and t[-1] == 4)
            if i is None:
                continue
            prog.append(("sym", i)); shapes.append(shapes[i])
        elif kind == "reshape":
            i = pick(lambda t: len(t) == 2)
            prog.append(("reshape", i)); shapes.append((shapes[i][0] * shapes[i][1],))
    return prog


def run_program(prog: list[tuple], tape: Tape, leaves: list[Tensor]) -> Tensor:
    vals = list(leaves)
    for ins in prog:
        kind = ins[0]
        a = vals[ins[1]]
        if kind == "tanh":
            out = a.tanh()
        elif kind == "scale":
            out = a * ins[2]
        elif kind == "add":
            out = a + vals[ins[2]]
        elif kind == "mul":
            out = a * vals[ins[2]]
        elif kind == "matmul":
            out = a @ vals[ins[2]]
        elif kind == "dot":
            out = a.dot(vals[ins[2]])
        elif kind == "concat":
            out = tape.concat([a, vals[ins[2]]], axis=0)
        elif kind == "slice":
            out = a[1:]
        elif kind == "transpose":
            out = a.T
        elif kind == "sum":
            out = a.sum()
        elif kind == "sym":
            out = tape.sym_apply(a, lambda v: v @ _SPD4)
        elif kind == "reshape":
            out = a.reshape(a.shape[0] * a.shape[1])
        else:
            raise ValueError(kind)
        vals.append(out)
    total = None
    for v in vals[len(leaves):]:
        term = v.tanh().sum() if v.shape else v.tanh()
        total = term if total is None else total + term
    return total


def random_leaves(rng: np.random.Generator, bound: float = 3.0) -> list[np.ndarray]:
    return [rng.uniform(-bound, bound, size=s) for s in LEAF_SHAPES]


def check_random_graph(rng: np.random.Generator, step: float = 1e-5) -> float:
    """Relative error between reverse-mode and central-difference gradients on one graph."""
    prog = random_program(rng, int(rng.integers(6, 16)))
    xs = random_leaves(rng)

    def f(arrs):
        tape = Tape()
        return float(run_program(prog, tape, [tape.tensor(a) for a in arrs]).value)

    tape = Tape()
    leaves = [tape.tensor(a) for a in xs]
    grads = tape.backward(run_program(prog, tape, leaves))
    return relative_error([grads[t] for t in leaves], fd_gradient(f, xs, step))


def riesz_defect(hamiltonian_fn: Callable[[np.ndarray, np.ndarray], float], grad_u, grad_ut, u, ut,
                 du, dut, gram, eps: float = 1e-5) -> float:
    """Relative gap between a finite-difference directional derivative of the
    Hamiltonian along (du, dut) and the L2 pairing with the claimed gradients."""
    fd = (hamiltonian_fn(u + eps * du, ut + eps * dut) - hamiltonian_fn(u - eps * du, ut - eps * dut)) / (2 * eps)
    pair = float(l2_inner(grad_u, du, gram) + l2_inner(grad_ut, dut, gram))
    return abs(fd - pair) / max(abs(fd), 1e-300)


# ---------------------------------------------------------------------------
# self-test
# ---------------------------------------------------------------------------

def run_selftest(emit=print) -> bool:
    from .deeponet import grad_hamiltonian, hamiltonian_values, init_model, trapezoid_rule
    from .wave_data import InitialCondition, dalembert

    results = []
    rng = np.random.default_rng(2024)
    worst = max(check_random_graph(rng) for _ in range(30))
    results.append(("autodiff vs finite differences (30 graphs)", worst < 1e-6, worst))

    gerr = 0.0
    for n in (4, 16):
        b = NodalBasis(n)
        gerr = max(gerr, float(np.max(np.abs(gram_matrix(b).matrix - quadrature_gram(b)))))
    results.append(("Gram entries vs quadrature", gerr < 1e-10, gerr))

    b = NodalBasis(32)
    g = gram_matrix(b)
    u = np.sin(2 * np.pi * b.nodes) + 0.3 * np.cos(6 * np.pi * b.nodes)
    tape = Tape()
    U = tape.tensor(u)
    H = U.dot(tape.sym_apply(U, g.apply)) * 0.5
    rec = g.solve(tape.gradient_wrt_input(H, U))
    terr = relative_error(rec, u)
    results.append(("variational derivative of (1/2)|u|^2_L2", terr < 1e-8, terr))

    rule = trapezoid_rule(b)
    rd = 0.0
    for seed in range(3):
        m = init_model(32, 8, 16, 2, seed)
        w = rng.normal(size=(4, 32)) * 0.5
        gu, gut = grad_hamiltonian(m, w[0], w[1], rule, g)
        rd = max(rd, riesz_defect(lambda a, c: float(hamiltonian_values(m, a, c, rule)[0]),
                                  gu, gut, w[0], w[1], w[2], w[3], g))
    results.append(("Riesz consistency of learned Hamiltonians", rd < 1e-5, rd))

    ic = InitialCondition([1.0], [0.0])
    t, x = np.meshgrid(np.linspace(0, 2, 21), b.nodes, indexing="ij")
    derr = float(np.max(np.abs(dalembert(ic, t, x)[0] - np.sin(2 * np.pi * x) * np.cos(2 * np.pi * t))))
    results.append(("d'Alembert closed form", derr < 1e-12, derr))

    for name, ok, val in results:
        emit(f"[{'PASS' if ok else 'FAIL'}] {name}: {val:.3e}")
    return all(ok for _, ok, _ in results)
