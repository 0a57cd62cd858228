"""Command-line pipeline: generate | train | evaluate | lqr | simulate.

Every subcommand takes --config PATH plus --out DIR and an optional --seed
override of the config's master seed.  Outputs are CSV files with a
rendered PNG figure next to each report, all stamped with the resolved
config hash.  Errors exit nonzero after printing a single parsable
`error: ...` line on stderr.

The run_* functions are plain library calls over an ExperimentConfig so
tests and notebooks can drive the same pipeline without a subprocess.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import koopman_model as km
from . import lqr as lqr_mod
from . import plant as plant_mod
from . import report, training
from .config import (
    SEED_DATA,
    SEED_EVAL,
    SEED_LQR_ICS,
    ConfigError,
    experiment_config,
    load_config,
)
from .monomial import build_basis


class CliError(RuntimeError):
    pass


def _initial_conditions(plant, spec):
    if spec.ic_layout == "edge":
        return plant_mod.edge_initial_conditions(plant.domain, spec.ic_count)
    if spec.ic_layout == "grid":
        return plant_mod.grid_initial_conditions(plant.domain, spec.ic_count)
    raise CliError(f"unknown ic_layout '{spec.ic_layout}'")


def run_generate(ec, out_dir):
    """Write the training dataset (plus unforced twins when configured)."""
    plant = plant_mod.get_plant(ec.plant)
    ics = _initial_conditions(plant, ec.data)
    signal_spec = {"amp_range": ec.data.amp_range, "hold_range": ec.data.hold_range}
    forced = plant_mod.generate_dataset(
        plant, ics, signal_spec, ec.data.horizon, ec.data.dt,
        mode=ec.data.mode, seed=ec.seed + SEED_DATA,
    )
    dataset = forced
    if ec.data.unforced_twin:
        unforced = plant_mod.generate_dataset(
            plant, ics, None, ec.data.horizon, ec.data.dt,
            mode=ec.data.mode, seed=ec.seed + SEED_DATA,
        )
        dataset = plant_mod.Dataset(
            x=np.vstack([unforced.x, forced.x]),
            u=np.vstack([unforced.u, forced.u]),
            xdot=np.vstack([unforced.xdot, forced.xdot]),
            meta={**forced.meta, "unforced_twin": True},
        )
    if ec.data.equilibrium_records > 0:
        # anchor the fixed point: (x*, 0, 0) is a valid sample of the
        # plant and pins the latent equilibrium during joint training
        n_eq = ec.data.equilibrium_records
        dataset = plant_mod.Dataset(
            x=np.vstack([dataset.x, np.tile(plant.equilibrium, (n_eq, 1))]),
            u=np.vstack([dataset.u, np.zeros((n_eq, plant.m))]),
            xdot=np.vstack([dataset.xdot, np.zeros((n_eq, plant.d))]),
            meta={**dataset.meta, "equilibrium_records": n_eq},
        )
    dataset.meta["config_hash"] = ec.hash
    dataset.meta["master_seed"] = ec.seed
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "dataset.csv"
    plant_mod.save_dataset(dataset, path)
    print(f"generate: wrote {len(dataset)} records to {path}")
    return path


def _provenance(ec):
    return f"config_hash={ec.hash} seed={ec.seed}"


def run_train(ec, dataset_path, out_dir):
    """Train the lifted model on a dataset and persist model + loss log."""
    dataset = plant_mod.load_dataset(dataset_path)
    ds_plant = dataset.meta.get("plant")
    if ds_plant is not None and ds_plant != ec.plant:
        raise CliError(
            f"dataset was generated for plant '{ds_plant}' but config says '{ec.plant}'"
        )
    basis = build_basis(dataset.x.shape[1], ec.hyper.p_bar)
    params, log = training.train(dataset, basis, ec.hyper)
    model = km.assemble_model(
        params,
        basis,
        meta={
            "plant": ec.plant,
            "master_seed": ec.seed,
            "config_hash": ec.hash,
            "epochs": ec.hyper.epochs,
            "mode": ec.hyper.mode,
        },
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.json"
    km.save_model(model, model_path)
    log.write_csv(out_dir / "training_log.csv", provenance=_provenance(ec))
    if log.epoch:
        report.render_loss_figure(out_dir / "training_loss.png", log,
                                  provenance=_provenance(ec))
        print(
            "train: final losses "
            f"pred={log.loss_pred[-1]:.3e} rec={log.loss_rec[-1]:.3e} "
            f"se={log.loss_se[-1]:.3e}"
        )
    print(f"train: wrote {model_path}")
    return model_path


def _test_trajectories(plant, ec):
    """Fresh APRBS-driven trajectories from random in-domain initial
    conditions (the open-loop evaluation protocol)."""
    rng = np.random.default_rng(ec.seed + SEED_EVAL)
    lows, highs = plant.domain[:, 0], plant.domain[:, 1]
    trajectories = []
    for k in range(ec.eval.n_trajectories):
        x0 = rng.uniform(lows, highs)
        signal = plant_mod.aprbs(
            ec.data.amp_range, ec.data.hold_range, ec.eval.horizon, ec.data.dt,
            seed=ec.seed + SEED_EVAL + 1 + k, m=plant.m,
        )
        states, _ = plant_mod.simulate(plant, x0, signal)
        trajectories.append((states, signal))
    return trajectories


def run_evaluate(ec, model_path, out_dir):
    """Open-loop prediction quality of the model vs the Taylor baseline."""
    model = km.load_model(model_path)
    model_plant = model.meta.get("plant")
    if model_plant is not None and model_plant != ec.plant:
        raise CliError(
            f"model was trained for plant '{model_plant}' but config says '{ec.plant}'"
        )
    plant = plant_mod.get_plant(ec.plant)
    taylor = km.taylor_model(plant, ec.data.dt)
    trajectories = _test_trajectories(plant, ec)
    kf_report = km.open_loop_rmse(model, trajectories, horizon=ec.eval.horizon)
    tl_report = km.open_loop_rmse(taylor, trajectories, horizon=ec.eval.horizon)

    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(min(ec.eval.plot_count, len(trajectories))):
        states, signal = trajectories[k]
        kf_roll = model.rollout(states[0], signal)
        tl_roll = taylor.rollout(states[0], signal)
        times = np.arange(len(states)) * signal.dt
        report.write_rollout_csv(
            out_dir / f"rollout_{k:03d}.csv", times, states, kf_roll.states,
            tl_roll.states, provenance=_provenance(ec),
        )
        report.render_rollout_figure(
            out_dir / f"rollout_{k:03d}.png", times, states, kf_roll.states,
            tl_roll.states, title=f"open-loop prediction, trajectory {k}",
            provenance=_provenance(ec),
        )
    reduction = report.write_rmse_summary(
        out_dir / "rmse_summary.csv", kf_report, tl_report,
        provenance=_provenance(ec),
    )
    report.render_rmse_figure(out_dir / "rmse_hist.png", kf_report, tl_report,
                              provenance=_provenance(ec))
    print(
        f"evaluate: KF mean RMSE {kf_report.mean:.4f}, TL mean RMSE "
        f"{tl_report.mean:.4f}, reduction {reduction:.1f}%"
    )
    return kf_report, tl_report, reduction


def _expand_diag(values, n, name):
    if len(values) == 1:
        return values[0] * np.eye(n)
    if len(values) == n:
        return np.diag(values)
    raise CliError(f"{name} needs 1 or {n} diagonal entries, got {len(values)}")


def run_lqr(ec, model_path, out_dir):
    """Synthesize the lifted LQR, compare against the Taylor-LQR baseline."""
    model = km.load_model(model_path)
    model_plant = model.meta.get("plant")
    if model_plant is not None and model_plant != ec.plant:
        raise CliError(
            f"model was trained for plant '{model_plant}' but config says '{ec.plant}'"
        )
    plant = plant_mod.get_plant(ec.plant)
    q = _expand_diag(ec.lqr.q_diag, plant.d, "lqr.q")
    r = _expand_diag(ec.lqr.r_diag, plant.m, "lqr.r")
    controller = lqr_mod.synthesize(
        model, q, r, eps_ridge=ec.lqr.eps_ridge, recenter=ec.lqr.recenter,
        x_eq=plant.equilibrium,
    )
    baseline = lqr_mod.taylor_lqr_baseline(plant, q, r)
    ics = lqr_mod.perimeter_ics(
        plant.domain, ec.lqr.ic_count, contraction=ec.lqr.contraction,
        seed=ec.seed + SEED_LQR_ICS,
    )
    cost = lqr_mod.compare(
        plant, controller, baseline, ics, ec.lqr.horizon, ec.lqr.dt, q, r
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    _save_controller(controller, ec, out_dir / "controller.json")
    report.write_cost_csv(out_dir / "cost_report.csv", cost,
                          provenance=_provenance(ec))
    report.write_cost_summary(out_dir / "cost_summary.csv", cost,
                              provenance=_provenance(ec))
    report.render_cost_figure(out_dir / "cost_comparison.png", cost,
                              provenance=_provenance(ec))
    report.render_closed_loop_figure(
        out_dir / "closed_loop_000.png", cost.kf[0], cost.baseline[0],
        title="closed loop from the first evaluation initial condition",
        provenance=_provenance(ec),
    )
    kf_stable, tl_stable = cost.stable_counts()
    print(
        f"lqr: mean J reduction {cost.reduction_mean_j:.2f}%, "
        f"mean J_u reduction {cost.reduction_mean_ju:.2f}%, "
        f"var J_u reduction {cost.reduction_var_ju:.2f}% "
        f"(stable KF {kf_stable}/{len(ics)}, TL {tl_stable}/{len(ics)})"
    )
    return cost


def _save_controller(controller, ec, path):
    doc = {
        "format": "kflqr-controller",
        "version": 1,
        "k_gain": controller.k_gain.tolist(),
        "z_offset": controller.z_offset.tolist(),
        "q": controller.q.tolist(),
        "r": controller.r.tolist(),
        "psi_eq_norm": controller.psi_eq_norm,
        "meta": {"plant": ec.plant, "config_hash": ec.hash, "master_seed": ec.seed},
    }
    Path(path).write_text(json.dumps(doc))


def run_simulate(ec, out_dir, model_path=None):
    """Open-loop plant trajectory (optionally with the model prediction)."""
    plant = plant_mod.get_plant(ec.plant)
    x0_cfg = ec.raw.get("sim.x0")
    if x0_cfg is None:
        x0 = plant_mod.edge_initial_conditions(plant.domain, 1)[0]
    else:
        x0 = np.array([float(v) for v in np.atleast_1d(x0_cfg)])
    horizon = float(ec.raw.get("sim.horizon", ec.data.horizon))
    input_kind = ec.raw.get("sim.input", "aprbs")
    if input_kind == "zero":
        signal = plant_mod.zero_signal(horizon, ec.data.dt, m=plant.m)
    elif input_kind == "aprbs":
        signal = plant_mod.aprbs(
            ec.data.amp_range, ec.data.hold_range, horizon, ec.data.dt,
            seed=ec.seed + SEED_EVAL, m=plant.m,
        )
    else:
        raise CliError(f"unknown sim.input '{input_kind}'")
    states, truncated = plant_mod.simulate(plant, x0, signal)
    times = np.arange(len(states)) * signal.dt
    model_states = None
    if model_path is not None:
        model = km.load_model(model_path)
        model_states = model.rollout(x0, signal).states
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_trajectory_csv(out_dir / "trajectory.csv", times, states,
                                signal.values, provenance=_provenance(ec))
    report.render_trajectory_figure(
        out_dir / "trajectory.png", times, states, model_states,
        title=f"{ec.plant} from {np.round(x0, 3).tolist()}",
        provenance=_provenance(ec),
    )
    if truncated:
        print("simulate: trajectory left the safety box and was truncated")
    print(f"simulate: wrote {len(states)} states to {out_dir / 'trajectory.csv'}")
    return out_dir / "trajectory.csv"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kflqr",
        description="Learn lifted LTI models of control-affine plants and "
        "synthesize LQR controllers from them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")

    p = sub.add_parser("generate", help="simulate the plant and write a dataset")
    add_common(p)

    p = sub.add_parser("train", help="train the lifted model on a dataset")
    add_common(p)
    p.add_argument("--data", default=None,
                   help="dataset CSV (default: <out>/dataset.csv)")

    p = sub.add_parser("evaluate", help="open-loop prediction vs Taylor baseline")
    add_common(p)
    p.add_argument("--model", default=None,
                   help="model file (default: <out>/model.json)")

    p = sub.add_parser("lqr", help="synthesize the controller and compare costs")
    add_common(p)
    p.add_argument("--model", default=None,
                   help="model file (default: <out>/model.json)")

    p = sub.add_parser("simulate", help="open-loop plant trajectory dump")
    add_common(p)
    p.add_argument("--model", default=None,
                   help="optional model file to roll out alongside the plant")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        ec = experiment_config(load_config(args.config), seed_override=args.seed)
        out_dir = Path(args.out)
        if args.command == "generate":
            run_generate(ec, out_dir)
        elif args.command == "train":
            data = Path(args.data) if args.data else out_dir / "dataset.csv"
            run_train(ec, data, out_dir)
        elif args.command == "evaluate":
            model = Path(args.model) if args.model else out_dir / "model.json"
            run_evaluate(ec, model, out_dir)
        elif args.command == "lqr":
            model = Path(args.model) if args.model else out_dir / "model.json"
            run_lqr(ec, model, out_dir)
        elif args.command == "simulate":
            model = Path(args.model) if args.model else None
            run_simulate(ec, out_dir, model_path=model)
    except (CliError, ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
