import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepham.basis import build_basis, gram_matrix
from deepham.deeponet import density, init_model, load_checkpoint, trapezoid_rule
from deepham.dynamics import exact_system, vector_field
from deepham.training import (Adam, NonFiniteLossError, SampleBank, TrainConfig, batch_indices, dataset_loss,
                              density_loss, dynamics_loss, loss_and_grads, residual_loss, sample_bank,
                              time_derivatives, train)
from deepham.wave_data import (Dataset, DataConfig, InitialCondition, Trajectory, generate, sample_initial,
                               trajectory)


def synthetic(values_fn, n_times=7, n=4, dt=0.1):
    t = dt * np.arange(n_times)
    u = np.stack([values_fn(tj) for tj in t])
    return Trajectory(t, np.arange(n) / n, u, 2 * u, InitialCondition([0.0], [0.0]))


def small_setup(n_traj=3, nx=8, nt=12, seed=0, **model_kw):
    ds = generate(DataConfig(n_traj=n_traj, nx=nx, nt=nt, t_max=1.0, seed=seed, amp=0.5))
    kw = dict(p=4, hidden=6, layers=2)
    kw.update(model_kw)
    m = init_model(nx, kw["p"], kw["hidden"], kw["layers"], seed)
    return ds, m, gram_matrix(ds.basis), trapezoid_rule(ds.basis)


def test_linear_in_time_is_exact():
    c = np.array([1.0, -2.0, 0.5, 3.0])
    tr = synthetic(lambda t: t * c)
    for j in range(tr.n_times):
        du, dut = time_derivatives(tr, j)
        np.testing.assert_allclose(du, c, rtol=1e-12)
        np.testing.assert_allclose(dut, 2 * c, rtol=1e-12)


def test_quadratic_in_time_is_exact_including_ends():
    c = np.array([1.0, -2.0, 0.5, 3.0])
    tr = synthetic(lambda t: t * t * c + 1.0)
    for j in range(tr.n_times):
        np.testing.assert_allclose(time_derivatives(tr, j)[0], 2 * tr.t[j] * c, rtol=1e-11, atol=1e-12)


def test_too_short_trajectory():
    tr = synthetic(lambda t: t * np.ones(4), n_times=2)
    with pytest.raises(ValueError):
        time_derivatives(tr, 0)
    with pytest.raises(IndexError):
        time_derivatives(synthetic(lambda t: t * np.ones(4)), 7)


def test_fd_time_derivative_second_order():
    ic = sample_initial(2, 3, 1.0)
    b = build_basis(32)
    errs = []
    for nt in (50, 100, 200):
        tr = trajectory(ic, b, nt, 1.0)
        j = 3 * nt // 10  # t = 0.3, where u_ttt does not vanish
        errs.append(np.max(np.abs(time_derivatives(tr, j)[0] - tr.ut[j])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.8, orders


def test_sample_bank_uses_interior_times():
    ds = generate(DataConfig(n_traj=2, nx=8, nt=10))
    bank = sample_bank(ds)
    assert len(bank) == 2 * 9
    np.testing.assert_array_equal(bank.u[0], ds.trajectories[0].u[1])


def test_zero_model_loss_is_mean_squared_rate():
    ds, _, gram, rule = small_setup()
    zero = init_model(8, 4, 6, 2, 0, zero_final=True)
    bank = sample_bank(ds)
    got = float(dynamics_loss(zero, gram, bank, rule).value)
    want = np.mean(ds.basis.h * (np.sum(bank.du ** 2, 1) + np.sum(bank.dut ** 2, 1)))
    assert got == pytest.approx(want, rel=1e-13)


def test_tape_loss_matches_numeric_residual():
    ds, m, gram, rule = small_setup()
    bank = sample_bank(ds)
    from deepham.dynamics import learned_system
    fu, fut = vector_field(learned_system(m), bank.u, bank.ut)
    want = residual_loss(fu, fut, bank.du, bank.dut, ds.basis.h)
    assert float(dynamics_loss(m, gram, bank, rule).value) == pytest.approx(want, rel=1e-11)


def test_exact_hamiltonian_with_exact_rates_has_tiny_loss():
    b = build_basis(128)
    system = exact_system(b, stencil="spectral", gradient="analytic")
    for seed in range(3):
        ic = sample_initial(seed, 1, 0.1)
        tr = trajectory(ic, b, 400, 2.0)
        assert tr.dt == pytest.approx(0.005)
        bank = sample_bank(Dataset([tr], b, DataConfig(n_traj=1, nx=128, nt=400)))
        fu, fut = vector_field(system, bank.u, bank.ut)
        assert residual_loss(fu, fut, bank.du, bank.dut, b.h) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_non_negative(seed):
    ds, m, gram, rule = small_setup(seed=seed % 50, n_traj=1)
    bank = sample_bank(ds)
    assert float(dynamics_loss(m, gram, bank, rule).value) >= 0
    assert float(density_loss(m, (bank.u, bank.ut), rule.nodes, bank.energy_density).value) >= 0


def test_density_loss_examples(rng):
    m = init_model(8, 4, 6, 2, 1)
    u, ut = rng.normal(size=(2, 3, 8))
    y = np.linspace(0, 1, 5)
    own = density(m, u, ut, y).value
    assert float(density_loss(m, (u, ut), y, own).value) == 0.0
    tau = rng.normal(size=(3, 5))
    zero = init_model(8, 4, 6, 2, 1, zero_final=True)
    assert float(density_loss(zero, (u, ut), y, tau).value) == pytest.approx(np.mean(tau ** 2), rel=1e-14)
    with pytest.raises(ValueError):
        density_loss(m, (u, ut), y, tau[:, :4])


def test_density_loss_descends_under_one_adam_step():
    ds = generate(DataConfig(n_traj=2, nx=8, nt=10, amp=0.5))
    bank = sample_bank(ds)
    gram, rule = gram_matrix(ds.basis), trapezoid_rule(ds.basis)
    wins = 0
    for seed in range(100):
        m = init_model(8, 4, 8, 2, seed)
        before, grads = loss_and_grads(m, gram, bank, rule, "density")
        stepped = m.with_parameters(Adam(m.parameters(), 1e-5).step(m.parameters(), grads))
        wins += dataset_loss(stepped, gram, bank, rule, "density") < before
    assert wins >= 95


@pytest.mark.parametrize("mode", ["dynamics", "density"])
def test_parameter_gradient_matches_finite_differences(mode):
    ds, m, gram, rule = small_setup(n_traj=2)
    bank = sample_bank(ds).take(slice(0, 10))
    _, grads = loss_and_grads(m, gram, bank, rule, mode)
    rng = np.random.default_rng(3)
    for _ in range(6):
        k = int(rng.integers(len(grads)))
        idx = tuple(int(rng.integers(s)) for s in grads[k].shape)

        def loss_at(delta):
            params = m.parameters()
            params[k] = params[k].copy()
            params[k][idx] += delta
            return loss_and_grads(m.with_parameters(params), gram, bank, rule, mode)[0]

        eps = 1e-6
        fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps)
        assert abs(fd - grads[k][idx]) <= 1e-4 * max(abs(fd), 1e-8), (k, idx, fd, grads[k][idx])


def test_adam_matches_hand_computation():
    p = [np.array([1.0, -1.0])]
    g = [np.array([0.5, -2.0])]
    opt = Adam(p, lr=0.1)
    out = opt.step(p, g)
    np.testing.assert_allclose(out[0], [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -1.0 + 0.1 * 2.0 / (2.0 + 1e-8)])
    out2 = opt.step(out, g)
    m = 0.9 * 0.1 * g[0] + 0.1 * g[0]
    v = 0.999 * 0.001 * g[0] ** 2 + 0.001 * g[0] ** 2
    np.testing.assert_allclose(out2[0], out[0] - 0.1 * (m / 0.19) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8))


def test_batch_indices_depend_on_seed_and_step_only():
    a = batch_indices(1, 5, 100, 16)
    assert np.array_equal(a, batch_indices(1, 5, 100, 16))
    assert not np.array_equal(a, batch_indices(1, 6, 100, 16))
    assert a.min() >= 0 and a.max() < 100


def test_zero_learning_rate_freezes_everything():
    ds = generate(DataConfig(n_traj=1, nx=8, nt=2, t_max=0.5))
    m = init_model(8, 4, 6, 2, 0)
    out, rep = train(m, ds, TrainConfig(lr=0.0, epochs=6, batch_size=4))
    assert all(np.array_equal(a, b) for a, b in zip(m.parameters(), out.parameters()))
    assert len(set(rep.losses)) == 1


def test_same_seed_same_run():
    ds, m, gram, rule = small_setup()
    cfg = TrainConfig(lr=1e-3, epochs=15, batch_size=8, seed=4)
    a, ra = train(m, ds, cfg, gram=gram, rule=rule)
    b, rb = train(m, ds, cfg, gram=gram, rule=rule)
    assert ra.losses == rb.losses
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_descent_on_average_over_seeds():
    drops = []
    for seed in range(4):
        ds, m, gram, rule = small_setup(seed=seed)
        bank = sample_bank(ds)
        before = dataset_loss(m, gram, bank, rule)
        out, _ = train(m, ds, TrainConfig(lr=1e-3, epochs=60, batch_size=16, seed=seed), gram=gram, rule=rule)
        drops.append(dataset_loss(out, gram, bank, rule) / before)
    assert np.mean(drops) < 1.0


def test_resume_replays_the_uninterrupted_run(tmp_path):
    ds, m, gram, rule = small_setup()
    full, r_full = train(m, ds, TrainConfig(lr=1e-3, epochs=30, batch_size=8), gram=gram, rule=rule)
    ckpt = tmp_path / "half.ckpt"
    log = tmp_path / "log.csv"
    train(m, ds, TrainConfig(lr=1e-3, epochs=12, batch_size=8), gram=gram, rule=rule, checkpoint_path=ckpt,
          log_path=log, checkpoint_meta={"config_hash": "h"})
    half, header, extra = load_checkpoint(ckpt)
    assert header["step"] == 12
    rest, r_rest = train(half, ds, TrainConfig(lr=1e-3, epochs=18, batch_size=8), gram=gram, rule=rule,
                         resume={"step": header["step"], "adam": extra}, log_path=log)
    assert r_rest.start_step == 12
    assert r_rest.losses == r_full.losses[12:]
    assert all(np.array_equal(x, y) for x, y in zip(full.parameters(), rest.parameters()))
    lines = log.read_text().splitlines()
    assert lines[0] == "# config_hash: h"
    rows = list(csv.DictReader(lines[1:]))
    assert [int(r["epoch"]) for r in rows] == list(range(30))


def test_periodic_checkpoints(tmp_path):
    ds, m, gram, rule = small_setup()
    ckpt = tmp_path / "c.ckpt"
    seen = []
    import deepham.training as tr_mod
    orig = tr_mod.save_checkpoint

    def spy(path, model, meta=None, extra=None):
        seen.append(meta["step"])
        return orig(path, model, meta, extra)

    tr_mod.save_checkpoint = spy
    try:
        train(m, ds, TrainConfig(lr=1e-3, epochs=10, batch_size=4, checkpoint_every=4), checkpoint_path=ckpt)
    finally:
        tr_mod.save_checkpoint = orig
    assert seen == [4, 8, 10]


def test_non_finite_loss_aborts_with_diagnostics():
    ds, m, gram, rule = small_setup(n_traj=1)
    tr = ds.trajectories[0]
    huge = Trajectory(tr.t, tr.x, tr.u * 1e160, tr.ut * 1e160, tr.ic, tr.ux)
    bad = Dataset([huge], ds.basis, ds.config)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteLossError) as info:
            train(m, bad, TrainConfig(epochs=3, batch_size=4))
    err = info.value
    assert err.epoch == 0 and len(err.param_norms) == len(m.parameters()) and len(err.batch) == 4
    assert "epoch 0" in str(err)


@pytest.mark.parametrize("bad", [dict(lr=-1.0), dict(epochs=0), dict(batch_size=0), dict(loss_mode="x"),
                                 dict(beta1=1.0)])
def test_invalid_train_config(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


def test_grid_mismatch_rejected():
    ds, _, _, _ = small_setup()
    with pytest.raises(ValueError, match="grid"):
        train(init_model(16, 4, 6, 2, 0), ds, TrainConfig(epochs=1))


def test_empty_batch_rejected():
    ds, m, gram, rule = small_setup()
    with pytest.raises(ValueError):
        dynamics_loss(m, gram, sample_bank(ds).take(slice(0, 0)), rule)


@pytest.mark.slow
def test_single_trajectory_overfit():
    ds = generate(DataConfig(n_traj=1, nx=32, seed=0))
    m = init_model(32, 20, 64, 3, 0)
    gram, rule = gram_matrix(ds.basis), trapezoid_rule(ds.basis)
    bank = sample_bank(ds)
    before = dataset_loss(m, gram, bank, rule)
    out, _ = train(m, ds, TrainConfig(epochs=2000), gram=gram, rule=rule)
    assert before / dataset_loss(out, gram, bank, rule) >= 100
