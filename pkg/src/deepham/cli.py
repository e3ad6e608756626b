"""Command-line entry point: ``deepham {generate,train,evaluate,selftest}``.

Exit codes: 0 success, 1 validation or input error, 2 runtime/numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .basis import gram_matrix
from .config import CHOICES, DEFAULTS, ConfigError, RunConfig
from .container import ContainerError
from .deeponet import init_model, load_checkpoint, trapezoid_rule
from .dynamics import IntegrationError, compare, exact_system, integrate, learned_system
from .training import NonFiniteLossError, TrainConfig, dataset_loss, sample_bank, train
from .wave_data import DataConfig, exact_energy, generate, load_dataset, save_dataset

log = logging.getLogger("deepham")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat key = value config file")
    for key, default in DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, dest=key, default=None, type=lambda s: s, metavar="BOOL")
        else:
            p.add_argument(flag, dest=key, default=None, type=str, choices=CHOICES.get(key),
                           metavar=None if key in CHOICES else type(default).__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepham", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset of exact wave trajectories")
    g.add_argument("--out", type=Path, required=True)
    _add_config_flags(g)

    t = sub.add_parser("train", help="fit a DeepONet Hamiltonian to a dataset")
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--log", type=Path, help="CSV training log (default: <out>.csv)")
    t.add_argument("--resume", type=Path, help="continue from this checkpoint")
    _add_config_flags(t)

    e = sub.add_parser("evaluate", help="roll out a Hamiltonian and write CSV and SVG diagnostics")
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--out-dir", type=Path, required=True)
    _add_config_flags(e)

    sub.add_parser("selftest", help="run the built-in oracle checks")
    return parser


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in DEFAULTS if getattr(args, k, None) is not None}
    return RunConfig.load(args.config, overrides)


def _data_config(cfg: RunConfig) -> DataConfig:
    return DataConfig(cfg.n_traj, cfg.modes, cfg.amp, cfg.nx, cfg.nt, cfg.t_max, cfg.seed)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(cfg.lr, cfg.epochs, cfg.batch_size, cfg.loss_mode, cfg.beta1, cfg.beta2, cfg.eps,
                       cfg.seed, cfg.checkpoint_every)


def _require(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def cmd_generate(args) -> int:
    cfg = _config(args)
    ds = generate(_data_config(cfg), cfg.hash)
    save_dataset(args.out, ds)
    drift = max(float(np.max(np.abs(e / e[0] - 1.0))) for e in map(exact_energy, ds.trajectories))
    status = "ok" if drift < 1e-10 else "FAILED"
    print(f"wrote {args.out}: {len(ds)} trajectories, nx={cfg.nx}, nt={cfg.nt}, t_max={cfg.t_max}, "
          f"config_hash={cfg.hash}")
    print(f"energy conservation: max relative drift {drift:.2e} ({status})")
    return EXIT_OK if drift < 1e-10 else EXIT_RUNTIME


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(_require(args.dataset, "dataset"))
    tcfg = _train_config(cfg).validate()
    resume = None
    if args.resume is not None:
        model, header, extra = load_checkpoint(_require(args.resume, "checkpoint"))
        if model.n_points != ds.basis.n_points:
            raise CliError(f"checkpoint grid N={model.n_points} does not match dataset N={ds.basis.n_points}")
        resume = {"step": header["step"], "adam": extra}
    else:
        model = init_model(ds.basis.n_points, cfg.p, cfg.hidden, cfg.layers, cfg.seed,
                           (ds.basis.x_lo, ds.basis.x_hi), cfg.zero_final)
    gram = gram_matrix(ds.basis, cfg.gram)
    rule = trapezoid_rule(ds.basis)
    bank = sample_bank(ds)
    before = dataset_loss(model, gram, bank, rule, tcfg.loss_mode)
    log_path = args.log or args.out.with_suffix(args.out.suffix + ".csv")
    meta = {"config_hash": cfg.hash, "dataset_hash": ds.config_hash, "gram": cfg.gram}
    model, report = train(model, ds, tcfg, gram=gram, rule=rule, log_path=log_path, checkpoint_path=args.out,
                          resume=resume, checkpoint_meta=meta)
    after = dataset_loss(model, gram, bank, rule, tcfg.loss_mode)
    ratio = before / after if after > 0 else float("inf")
    print(f"trained {report.steps} steps (from step {report.start_step}) in {report.wall_ms[-1] / 1e3:.1f} s")
    print(f"dataset {tcfg.loss_mode} loss: {before:.6g} -> {after:.6g} (x{ratio:.1f} reduction)")
    print(f"wrote {args.out} and {log_path}, config_hash={cfg.hash}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import plotting
    from .kernels import dalembert_lattice

    cfg = _config(args)
    ds = load_dataset(_require(args.dataset, "dataset"))
    if not 0 <= cfg.traj < len(ds):
        raise CliError(f"trajectory index {cfg.traj} outside 0..{len(ds) - 1}")
    truth = exact_system(ds.basis, gram_mode=cfg.gram)
    learned = None
    if args.checkpoint is not None:
        model, header, _ = load_checkpoint(_require(args.checkpoint, "checkpoint"))
        if model.n_points != ds.basis.n_points or tuple(model.domain) != (ds.basis.x_lo, ds.basis.x_hi):
            raise CliError(f"checkpoint grid (N={model.n_points}, domain={model.domain}) does not match dataset "
                           f"grid (N={ds.basis.n_points}, domain={(ds.basis.x_lo, ds.basis.x_hi)})")
        if header.get("dataset_hash") not in (None, ds.config_hash):
            log.warning("checkpoint was trained on dataset %s, evaluating on %s", header["dataset_hash"], ds.config_hash)
        learned = learned_system(model, cfg.gram)
    elif cfg.source == "learned":
        raise CliError("--checkpoint is required for source=learned")
    system = learned if cfg.source == "learned" else truth

    steps = int(round(cfg.t_eval / cfg.dt_eval))
    if steps < 1:
        raise CliError("t_eval / dt_eval must give at least one step")
    tr = ds.trajectories[cfg.traj]
    rep = integrate(system, tr.u[0], tr.ut[0], cfg.dt_eval, steps, cfg.method)
    ref_u, ref_ut, _ = dalembert_lattice(tr.ic.a, tr.ic.b, rep.times, ds.basis.nodes)
    compare(rep, ref_u, ref_ut, learned, truth)

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "rollout.csv", cfg.hash)
    x = ds.basis.nodes
    plotting.field_heatmaps(out / "fields_true.svg", rep.times, x, ref_u, ref_ut, "true", cfg.hash)
    plotting.field_heatmaps(out / "fields_rollout.svg", rep.times, x, rep.u, rep.ut, f"{cfg.source} rollout", cfg.hash)
    plotting.hamiltonian_plot(out / "hamiltonian.svg", rep.times, rep.h_learned_on_true, rep.h_true_on_learned,
                              cfg.hash)
    frozen = float(max(np.max(np.abs(rep.u - rep.u[0])), np.max(np.abs(rep.ut - rep.ut[0]))))
    h_true = rep.h_true_on_learned
    print(f"source={cfg.source} method={cfg.method} steps={steps} dt={cfg.dt_eval}")
    print(f"relative space-time L2 error vs exact solution: {rep.relative_error():.4e}")
    print(f"max |w(t) - w(0)| along rollout: {frozen:.4e}")
    print(f"true Hamiltonian on rollout: relative drift {np.max(np.abs(h_true / h_true[0] - 1.0)):.3e}")
    if rep.h_learned_on_true is not None:
        print(f"learned Hamiltonian on true states: max |H_NO(t) - H_NO(0)| = "
              f"{np.max(np.abs(rep.h_learned_on_true)):.3e}")
    print(f"wrote {out}/rollout.csv, fields_true.svg, fields_rollout.svg, hamiltonian.svg")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .oracles import run_selftest

    print(f"kernel backend: {kernels.BACKEND}")
    return EXIT_OK if run_selftest() else EXIT_RUNTIME


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ContainerError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteLossError, IntegrationError, FloatingPointError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
