from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepham.autodiff import Tape
from deepham.basis import build_basis, gram_matrix
from deepham.container import ContainerError
from deepham.deeponet import (QuadratureRule, bind, branch_input, density, functional_gradient, grad_hamiltonian,
                              hamiltonian, hamiltonian_rows, hamiltonian_values, init_model, input_gradient_on_tape,
                              load_checkpoint, save_checkpoint, trapezoid_rule)
from deepham.oracles import fd_gradient, relative_error, riesz_defect


def small_model(seed=0, n=8, p=5, hidden=7, layers=2, **kw):
    return init_model(n, p, hidden, layers, seed, **kw)


def scaled_branch_output(model, alpha):
    params = model.parameters()
    nb = 2 * len(model.branch.weights)
    params[nb - 2] = params[nb - 2] * alpha
    params[nb - 1] = params[nb - 1] * alpha
    return model.with_parameters(params)


def constant_density_model(n, kappa, p=4):
    m = init_model(n, p, 6, 2, 3)
    params = m.parameters()
    nb = 2 * len(m.branch.weights)
    params[nb - 2][:] = 0.0
    params[nb - 1][:] = kappa
    params[-2][:] = 0.0
    params[-1][:] = 1.0 / p
    return m.with_parameters(params)


def test_same_seed_bit_identical():
    a, b = init_model(16, 4, 8, 3, 11), init_model(16, 4, 8, 3, 11)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    c = init_model(16, 4, 8, 3, 12)
    assert not all(np.array_equal(x, y) for x, y in zip(a.parameters(), c.parameters()))


def test_shape_bookkeeping():
    m = init_model(32, 20, 64, 3, 0)
    assert m.branch.n_in == 64 and m.branch.n_out == 20
    assert m.trunk.n_in == 1 and m.trunk.n_out == 20
    assert len(m.branch.weights) == 4 and len(m.trunk.weights) == 4


def test_init_is_fan_in_scaled():
    m = init_model(32, 20, 64, 3, 0)
    for w, b in zip(m.branch.weights + m.trunk.weights, m.branch.biases + m.trunk.biases):
        bound = 1 / np.sqrt(w.shape[0])
        assert np.abs(w).max() <= bound and np.abs(b).max() <= bound


@pytest.mark.parametrize("field", ["n_points", "p", "hidden", "layers"])
def test_sizes_validated(field):
    kw = dict(n_points=8, p=2, hidden=3, layers=1, seed=0)
    kw[field] = 0
    with pytest.raises(ValueError):
        init_model(**kw)


def test_initial_density_bounded_for_unit_inputs():
    rng = np.random.default_rng(0)
    rule_y = np.linspace(0, 1, 33)
    worst = 0.0
    for seed in range(100):
        m = init_model(32, 20, 64, 3, seed)
        w = rng.normal(size=64)
        w /= np.linalg.norm(w)
        worst = max(worst, float(np.abs(density(m, w[:32], w[32:], rule_y).value).max()))
    assert worst < 10.0


def test_zero_final_branch_layer_gives_zero_density(rng):
    m = small_model(zero_final=True)
    u, ut = rng.normal(size=(2, 3, 8))
    assert np.all(density(m, u, ut, np.linspace(0, 1, 9)).value == 0.0)
    assert float(hamiltonian(m, u, ut, trapezoid_rule(m.basis)).value) == 0.0
    gu, gut = grad_hamiltonian(m, u[0], ut[0], trapezoid_rule(m.basis), gram_matrix(m.basis))
    assert np.all(gu == 0) and np.all(gut == 0)


def test_density_shapes(rng):
    m = small_model()
    u, ut = rng.normal(size=(2, 3, 8))
    assert density(m, u[0], ut[0], 0.3).shape == ()
    assert density(m, u[0], ut[0], [0.1, 0.2]).shape == (2,)
    assert density(m, u, ut, 0.3).shape == (3,)
    assert density(m, u, ut, [0.1, 0.2]).shape == (3, 2)


def test_density_is_pure(rng):
    m = small_model()
    u, ut = rng.normal(size=(2, 8))
    a = density(m, u, ut, [0.0, 0.5, 1.0]).value
    b = density(m, u, ut, [0.0, 0.5, 1.0]).value
    assert np.array_equal(a, b)


def test_density_matches_numeric_forward(rng):
    m = small_model()
    u, ut = rng.normal(size=(2, 4, 8))
    y = np.linspace(0, 1, 6)
    ref = m.branch(np.concatenate([u, ut], 1)) @ m.trunk(y[:, None]).T
    np.testing.assert_allclose(density(m, u, ut, y).value, ref, rtol=1e-13)


@pytest.mark.parametrize("y", [-1e-9, 1.0 + 1e-9, 2.0])
def test_location_outside_domain(y):
    with pytest.raises(ValueError, match="domain"):
        density(small_model(), np.zeros(8), np.zeros(8), y)


def test_density_gradient_matches_finite_differences(rng):
    m = small_model(2)
    u, ut = rng.normal(size=(2, 8))

    def f(xs):
        return float(density(m, xs[0], ut, 0.37).value)

    tape = Tape()
    U = tape.tensor(u)
    g = tape.gradient_wrt_input(density(m, U, ut, 0.37, tape), U)
    assert relative_error(g, fd_gradient(f, [u])[0]) < 1e-5


def test_hamiltonian_is_rule_sum_of_density(rng):
    m = small_model(4)
    rule = trapezoid_rule(m.basis)
    u, ut = rng.normal(size=(2, 3, 8))
    dens = density(m, u, ut, rule.nodes).value
    np.testing.assert_allclose(hamiltonian_rows(m, u, ut, rule).value[:, 0], dens @ rule.weights, rtol=1e-13)
    np.testing.assert_allclose(hamiltonian_values(m, u, ut, rule), dens @ rule.weights, rtol=1e-13)
    assert float(hamiltonian(m, u, ut, rule).value) == pytest.approx(float(np.sum(dens @ rule.weights)), rel=1e-13)


@pytest.mark.parametrize("domain", [(0.0, 1.0), (-1.0, 2.0)])
def test_constant_density_integrates_to_kappa_times_length(domain):
    n = 16
    m = replace(constant_density_model(n, 3.0), domain=domain)
    rule = trapezoid_rule(m.basis)
    val = float(hamiltonian(m, np.ones(n), np.zeros(n), rule).value)
    assert val == pytest.approx(3.0 * (domain[1] - domain[0]), rel=1e-14)


def test_trapezoid_rule_of_true_density_gives_pi_squared():
    b = build_basis(128)
    rule = trapezoid_rule(b)
    ux = 2 * np.pi * np.cos(2 * np.pi * rule.nodes)
    assert abs(np.sum(rule.weights * 0.5 * ux ** 2) - np.pi ** 2) < 1e-2
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-14)


def test_quadrature_rule_validation():
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros(3), np.ones(2))
    with pytest.raises(ValueError):
        QuadratureRule(np.zeros(3), np.array([1.0, 0.0, 1.0]))


@pytest.mark.parametrize("alpha", [2.0, 0.5, -4.0])
def test_bilinearity_in_branch_output(alpha, rng):
    m = small_model(5)
    ms = scaled_branch_output(m, alpha)
    u, ut = rng.normal(size=(2, 3, 8))
    rule = trapezoid_rule(m.basis)
    y = np.linspace(0, 1, 5)
    assert np.array_equal(density(ms, u, ut, y).value, alpha * density(m, u, ut, y).value)
    assert np.array_equal(hamiltonian_values(ms, u, ut, rule), alpha * hamiltonian_values(m, u, ut, rule))


def test_riesz_consistency_for_random_models():
    rng = np.random.default_rng(99)
    worst = 0.0
    for seed in range(20):
        m = init_model(16, 6, 12, 2, seed)
        rule, gram = trapezoid_rule(m.basis), gram_matrix(m.basis)
        u, ut, du, dut = rng.normal(size=(4, 16)) * 0.5
        gu, gut = grad_hamiltonian(m, u, ut, rule, gram)
        worst = max(worst, riesz_defect(lambda a, c: float(hamiltonian_values(m, a, c, rule)[0]),
                                        gu, gut, u, ut, du, dut, gram))
    assert worst < 1e-5


def test_quadratic_stub_returns_state(rng):
    b = build_basis(24)
    g = gram_matrix(b)
    u, ut = rng.normal(size=(2, 24))

    def stub(tape, U, UT):
        return (U.dot(tape.sym_apply(U, g.apply)) + UT.dot(tape.sym_apply(UT, g.apply))) * 0.5

    gu, gut = functional_gradient(stub, u, ut, g)
    np.testing.assert_allclose(gu, u, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(gut, ut, rtol=1e-10, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
def test_explicit_input_gradient_matches_backward(seed, layers, batch):
    rng = np.random.default_rng(seed)
    m = init_model(6, 3, 5, layers, seed)
    rule = trapezoid_rule(m.basis)
    u, ut = rng.normal(size=(2, batch, 6))
    tape = Tape()
    x = branch_input(tape, u, ut)
    explicit = input_gradient_on_tape(bind(m, tape), x, rule).value
    t2 = Tape()
    U, UT = t2.tensor(u), t2.tensor(ut)
    g = t2.backward(hamiltonian(m, U, UT, rule, t2))
    np.testing.assert_allclose(explicit, np.concatenate([g[U], g[UT]], 1), rtol=1e-11, atol=1e-13)


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    m = init_model(8, 3, 5, 2, 4)
    m = m.with_parameters([p + rng.normal(size=p.shape) * 1e-3 for p in m.parameters()])
    extra = {"adam_m_000": rng.normal(size=(3, 2))}
    save_checkpoint(tmp_path / "a.ckpt", m, {"note": "x"}, extra)
    back, header, ex = load_checkpoint(tmp_path / "a.ckpt")
    assert all(np.array_equal(x, y) for x, y in zip(m.parameters(), back.parameters()))
    assert header["note"] == "x" and header["n_points"] == 8
    assert np.array_equal(ex["adam_m_000"], extra["adam_m_000"])
    save_checkpoint(tmp_path / "b.ckpt", back, {"note": "x"}, ex)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_other_files(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ContainerError):
        load_checkpoint(bad)


def test_with_parameters_checks_layout():
    m = small_model()
    with pytest.raises(ValueError):
        m.with_parameters(m.parameters()[:-1])
