"""Command line entry points: generate, train, evaluate, reproduce.

Every command is deterministic given its config and seed. Exit codes: 0 on
success, 1 when a reproduction check fails, 2 for config or usage problems,
3 for numeric failures, 4 for IO failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys

import numpy as np

from . import __version__
from .autodiff import no_grad, value_of
from .config import ExperimentConfig, default_config, load_config, write_config
from .errors import (
    ConfigError,
    DeserializationError,
    FlowDmdError,
    NumericError,
    RankDeficiencyError,
    SingularScaleError,
    SolverError,
    TrainingDivergenceError,
    UsageError,
    ZeroReferenceError,
)
from .flows import FlowNetwork
from .metrics import error_report, write_report_csv, write_summary_csv
from .systems import Dataset, load_dataset, make_dataset, save_dataset, write_dataset_csv
from .training import (
    TrainState,
    exact_dmd_baseline,
    reconstruct_with_flow,
    train_ae_baseline,
    train_flowdmd,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

CHECKPOINT_FORMAT = "flowdmd-checkpoint"
CHECKPOINT_VERSION = 1

METHODS = ("flowdmd", "exact_dmd", "ae_baseline")

# encoder/decoder widths for the pointwise autoencoder baseline
AE_DIMS = {
    "fixed_point": ([2, 10, 10, 3], [3, 10, 10, 2]),
    "burgers": ([30, 40, 50, 40], [40, 50, 40, 30]),
    "allen_cahn": ([20, 30, 40, 30], [30, 40, 30, 20]),
}


def _version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if described.returncode == 0:
            return f"{__version__}+{described.stdout.strip()}"
    except OSError:
        pass
    return __version__


def _hex_list(values) -> list:
    return [float.hex(float(v)) for v in np.asarray(values, dtype=np.float64).ravel()]


def _unhex_array(values, shape) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values]).reshape(shape)


def _encode_state(state: TrainState, flow: FlowNetwork) -> dict:
    shapes = [list(p.value.shape) for p in flow.parameters()]
    return {
        "epoch": state.epoch,
        "param_shapes": shapes,
        "params": [_hex_list(v) for v in state.params],
        "best_params": [_hex_list(v) for v in state.best_params],
        "adam": {
            "step": state.adam["step"],
            "lr": float.hex(state.adam["lr"]),
            "beta1": state.adam["beta1"],
            "beta2": state.adam["beta2"],
            "eps": state.adam["eps"],
            "m": [_hex_list(a) for a in state.adam["m"]],
            "v": [_hex_list(a) for a in state.adam["v"]],
        },
        "scheduler": {
            "lr": float.hex(state.scheduler["lr"]),
            "best": float.hex(state.scheduler["best"]),
            "bad_epochs": state.scheduler["bad_epochs"],
        },
        "best_val": float.hex(state.best_val),
        "best_epoch": state.best_epoch,
        "stall": state.stall,
        "history": [list(row) for row in state.history],
    }


def _decode_state(data: dict) -> TrainState:
    shapes = [tuple(s) for s in data["param_shapes"]]
    return TrainState(
        epoch=int(data["epoch"]),
        params=[_unhex_array(v, s) for v, s in zip(data["params"], shapes)],
        adam={
            "step": int(data["adam"]["step"]),
            "lr": float.fromhex(data["adam"]["lr"]),
            "beta1": data["adam"]["beta1"],
            "beta2": data["adam"]["beta2"],
            "eps": data["adam"]["eps"],
            "m": [_unhex_array(v, s) for v, s in zip(data["adam"]["m"], shapes)],
            "v": [_unhex_array(v, s) for v, s in zip(data["adam"]["v"], shapes)],
        },
        scheduler={
            "lr": float.fromhex(data["scheduler"]["lr"]),
            "best": float.fromhex(data["scheduler"]["best"]),
            "bad_epochs": int(data["scheduler"]["bad_epochs"]),
        },
        best_val=float.fromhex(data["best_val"]),
        best_epoch=int(data["best_epoch"]),
        best_params=[_unhex_array(v, s) for v, s in zip(data["best_params"], shapes)],
        stall=int(data["stall"]),
        history=[tuple(row) for row in data["history"]],
    )


def save_checkpoint(path, trained, config: ExperimentConfig) -> None:
    # trained.flow carries the best-validation parameters; the state block
    # carries the last parameters plus optimizer/scheduler state for resume
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tool_version": _version_string(),
        "config": config.to_dict(),
        "best_network": trained.flow.to_dict(),
        "state": _encode_state(trained.state, trained.flow),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise DeserializationError(f"{path}: not valid JSON ({err})") from None
    try:
        if data["format"] != CHECKPOINT_FORMAT:
            raise DeserializationError(f"{path}: unexpected format {data['format']!r}")
        if data["version"] != CHECKPOINT_VERSION:
            raise DeserializationError(f"{path}: unsupported version {data['version']!r}")
        config = ExperimentConfig.from_dict(data["config"])
        flow = FlowNetwork.from_dict(data["best_network"])
        state = _decode_state(data["state"])
    except (KeyError, TypeError, ValueError) as err:
        raise DeserializationError(f"{path}: malformed checkpoint ({err})") from None
    return config, flow, state


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_linear", "l_rec", "total", "val_total", "lr"])
        for row in history:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _dataset_paths(out_dir):
    return (os.path.join(out_dir, "dataset.txt"),
            os.path.join(out_dir, "dataset.csv"),
            os.path.join(out_dir, "manifest.txt"))


def cmd_generate(config: ExperimentConfig, out_dir=None) -> int:
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    data_path, csv_path, manifest_path = _dataset_paths(out_dir)
    save_dataset(dataset, data_path)
    write_dataset_csv(dataset, csv_path)
    with open(manifest_path, "w") as fh:
        fh.write(f"version {_version_string()}\n")
        fh.write(f"system {config.system}\n")
        fh.write(f"seed {config.seed}\n")
        fh.write(f"n_samples {config.n_samples}\n")
        fh.write(f"n_train {len(dataset.train)}\n")
        fh.write(f"n_val {len(dataset.val)}\n")
        fh.write(f"n_test {len(dataset.test)}\n")
        fh.write(f"dataset {os.path.basename(data_path)}\n")
        fh.write(f"csv {os.path.basename(csv_path)}\n")
    print(f"wrote {data_path} ({len(dataset.train)}/{len(dataset.val)}/"
          f"{len(dataset.test)} train/val/test)")
    return EXIT_OK


def cmd_train(config: ExperimentConfig, dataset_path=None, out_dir=None,
              resume_path=None) -> int:
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if dataset_path is None:
        dataset_path = _dataset_paths(out_dir)[0]
    if not os.path.exists(dataset_path):
        raise FileNotFoundError(f"dataset file not found: {dataset_path}")
    dataset = load_dataset(dataset_path)
    resume_state = None
    if resume_path is not None:
        _, _, resume_state = load_checkpoint(resume_path)
    trained = train_flowdmd(config.flow_config(), dataset, resume=resume_state)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    hist_path = os.path.join(out_dir, "history.csv")
    save_checkpoint(ckpt_path, trained, config)
    write_history_csv(trained.history, hist_path)
    last = trained.history[-1]
    print(f"trained {last[0] + 1} epochs; best val {trained.best_val:.6e} "
          f"at epoch {trained.best_epoch}; wrote {ckpt_path}")
    return EXIT_OK


def _reconstructions(method, flow, config, trajectories):
    if method == "flowdmd":
        return [reconstruct_with_flow(flow, t, config.rank) for t in trajectories]
    if method == "exact_dmd":
        recons, _ = exact_dmd_baseline(trajectories, config.rank)
        return recons
    raise UsageError(f"unknown method {method!r}; choose from {METHODS}")


def cmd_evaluate(checkpoint_path, dataset_path, methods, out_dir) -> int:
    os.makedirs(out_dir, exist_ok=True)
    if not os.path.exists(checkpoint_path):
        raise FileNotFoundError(f"checkpoint file not found: {checkpoint_path}")
    config, flow, _ = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_path)
    trajectories = dataset.test
    if not trajectories:
        raise ConfigError("dataset has no test split")
    reports = []
    per_method = {}
    for method in methods:
        if method == "ae_baseline":
            enc_dims, dec_dims = AE_DIMS[config.system]
            demo = train_ae_baseline(enc_dims, dec_dims, dataset, seed=config.seed)
            with no_grad():
                recons = [
                    value_of(demo.decoder.forward(demo.encoder.forward(t.states)))
                    for t in trajectories
                ]
        else:
            recons = _reconstructions(method, flow, config, trajectories)
        per_method[method] = recons
        for traj, recon in zip(trajectories, recons):
            reports.append(error_report(recon, traj.states, traj.sample_id, method))
    write_summary_csv(reports, os.path.join(out_dir, "summary.csv"))
    # per-step metrics for the designated sample (first test trajectory)
    showcased = trajectories[0].sample_id
    write_report_csv([r for r in reports if r.sample_id == showcased],
                     os.path.join(out_dir, "report.csv"))
    _write_plot_data(trajectories, reports, methods, out_dir)
    for method in methods:
        mean = np.mean([r.trl2e for r in reports if r.method == method])
        print(f"{method}: mean test trl2e {mean:.6e}")
    return EXIT_OK


def _write_plot_data(trajectories, reports, methods, out_dir) -> None:
    """Whitespace-delimited plot files: per-sample totals and per-step errors."""
    by_method = {m: {r.sample_id: r for r in reports if r.method == m} for m in methods}
    ids = [t.sample_id for t in trajectories]
    with open(os.path.join(out_dir, "plot_trl2e.dat"), "w") as fh:
        fh.write("# sample_id " + " ".join(methods) + "\n")
        for sid in ids:
            row = " ".join(f"{by_method[m][sid].trl2e:.8e}" for m in methods)
            fh.write(f"{sid} {row}\n")
    showcased = ids[0]
    steps = len(by_method[methods[0]][showcased].rl2e)
    for metric in ("rl2e", "mse"):
        with open(os.path.join(out_dir, f"plot_{metric}.dat"), "w") as fh:
            fh.write("# t " + " ".join(methods) + "\n")
            for t in range(steps):
                row = " ".join(
                    f"{getattr(by_method[m][showcased], metric)[t]:.8e}" for m in methods
                )
                fh.write(f"{t + 1} {row}\n")


def _trl2e_by_method(config, dataset, flow, methods):
    out = {}
    for method in methods:
        recons = _reconstructions(method, flow, config, dataset.test)
        out[method] = np.array([
            error_report(r, t.states, t.sample_id, method).trl2e
            for r, t in zip(recons, dataset.test)
        ])
    return out


def _pipeline(config: ExperimentConfig):
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    trained = train_flowdmd(config.flow_config(), dataset)
    return dataset, trained


class CheckRow:
    def __init__(self, name, reference, obtained, requirement, passed):
        self.name = name
        self.reference = reference
        self.obtained = obtained
        self.requirement = requirement
        self.passed = bool(passed)


def _reproduce_fig1():
    """Planar attractor benchmark: flow reconstruction against the raw-state
    spectral baseline."""
    config = default_config("fixed_point")
    dataset, trained = _pipeline(config)
    errors = _trl2e_by_method(config, dataset, trained.flow, ("flowdmd", "exact_dmd"))
    flow_mean = errors["flowdmd"].mean()
    exact_mean = errors["exact_dmd"].mean()
    wins = float(np.mean(errors["flowdmd"] < errors["exact_dmd"]))
    return [
        CheckRow("flow mean trl2e", "0.003", f"{flow_mean:.4f}", "<= 0.02",
                 flow_mean <= 0.02),
        CheckRow("raw-state mean trl2e", "0.2448 (showcase)", f"{exact_mean:.4f}",
                 ">= 0.05", exact_mean >= 0.05),
        CheckRow("flow beats raw-state", "almost all samples", f"{wins:.0%}",
                 ">= 80%", wins >= 0.8),
    ]


def _reproduce_fig2():
    """Autoencoder generalization probe on the planar attractor data."""
    config = default_config("fixed_point")
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    enc_dims, dec_dims = AE_DIMS["fixed_point"]
    demo = train_ae_baseline(enc_dims, dec_dims, dataset, seed=config.seed)
    rep = demo.report
    ood_ratio = rep["ood_normal_scatter"] / rep["holdout_reconstruction"]
    latent_ratio = rep["latent_roundtrip"] / rep["train_reconstruction"]
    return [
        CheckRow("ood/in-dist error ratio", "large", f"{ood_ratio:.1f}",
                 ">= 5", ood_ratio >= 5.0),
        CheckRow("latent/state round-trip ratio", "large", f"{latent_ratio:.1f}",
                 ">= 5", latent_ratio >= 5.0),
    ]


def _reproduce_fig7():
    config = default_config("burgers")
    dataset, trained = _pipeline(config)
    errors = _trl2e_by_method(config, dataset, trained.flow, ("flowdmd", "exact_dmd"))
    flow_mean = errors["flowdmd"].mean()
    wins = float(np.mean(errors["flowdmd"] < errors["exact_dmd"]))
    return [
        CheckRow("flow mean trl2e", "0.015", f"{flow_mean:.4f}", "<= 0.08",
                 flow_mean <= 0.08),
        CheckRow("flow beats raw-state", "most samples", f"{wins:.0%}",
                 ">= 60%", wins >= 0.6),
    ]


def _reproduce_fig10():
    config = default_config("allen_cahn")
    dataset, trained = _pipeline(config)
    errors = _trl2e_by_method(config, dataset, trained.flow, ("flowdmd",))
    flow_mean = errors["flowdmd"].mean()
    return [
        CheckRow("flow mean trl2e", "0.09", f"{flow_mean:.4f}", "<= 0.2",
                 flow_mean <= 0.2),
    ]


def _reproduce_fig14():
    rows = []
    config = default_config("allen_cahn")
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    values = []
    for seed in range(15):
        flow_config = config.flow_config()
        flow_config.seed = seed
        trained = train_flowdmd(flow_config, dataset)
        errors = _trl2e_by_method(config, dataset, trained.flow, ("flowdmd",))
        values.append(errors["flowdmd"].mean())
    values = np.array(values)
    rows.append(CheckRow("trl2e mean over 15 seeds", "0.065", f"{values.mean():.4f}",
                         "reported", True))
    rows.append(CheckRow("trl2e std over 15 seeds", "0.016", f"{values.std(ddof=1):.4f}",
                         "std <= mean", values.std(ddof=1) <= values.mean()))
    return rows


def _reproduce_table_alpha():
    rows = []
    references = {0.01: "0.062", 0.1: "0.068", 1.0: "0.082", 10.0: "0.032",
                  100.0: "0.069"}
    config = default_config("allen_cahn")
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    for alpha, reference in references.items():
        flow_config = config.flow_config()
        flow_config.alpha = alpha
        trained = train_flowdmd(flow_config, dataset)
        value = _trl2e_by_method(config, dataset, trained.flow,
                                 ("flowdmd",))["flowdmd"].mean()
        rows.append(CheckRow(f"trl2e at weight {alpha}", reference, f"{value:.4f}",
                             "<= 0.2", value <= 0.2))
    return rows


def _reproduce_table_rank():
    references = {1: "0.174", 3: "0.068", 5: "0.067", 7: "0.009", 9: "0.003"}
    config = default_config("allen_cahn")
    dataset = make_dataset(config.system, config.n_samples, config.seed,
                           **config.system_kwargs())
    values = {}
    rows = []
    for rank, reference in references.items():
        flow_config = config.flow_config()
        flow_config.rank = rank
        trained = train_flowdmd(flow_config, dataset)
        values[rank] = _trl2e_by_method(config, dataset, trained.flow,
                                        ("flowdmd",))["flowdmd"].mean()
        rows.append(CheckRow(f"trl2e at rank {rank}", reference,
                             f"{values[rank]:.4f}", "reported", True))
    ordered = [values[r] for r in sorted(values)]
    inversions = sum(1 for a, b in zip(ordered, ordered[1:]) if b > a)
    rows.append(CheckRow("rank-9 improvement over rank-1", ">= 5x",
                         f"{values[1] / values[9]:.1f}x", ">= 5x",
                         values[9] * 5.0 <= values[1]))
    rows.append(CheckRow("non-increasing trend inversions", "0", str(inversions),
                         "<= 1", inversions <= 1))
    return rows


REPRODUCE_TARGETS = {
    "fig1": _reproduce_fig1,
    "fig2": _reproduce_fig2,
    "fig7": _reproduce_fig7,
    "fig10": _reproduce_fig10,
    "fig14": _reproduce_fig14,
    "table_alpha": _reproduce_table_alpha,
    "table_rank": _reproduce_table_rank,
}


def cmd_reproduce(target: str, out_dir) -> int:
    if target not in REPRODUCE_TARGETS:
        valid = ", ".join(sorted(REPRODUCE_TARGETS))
        raise UsageError(f"unknown target {target!r}; valid targets: {valid}")
    os.makedirs(out_dir, exist_ok=True)
    rows = REPRODUCE_TARGETS[target]()
    lines = [f"reproduction report: {target}",
             f"{'check':40s} {'reference':>18s} {'obtained':>12s} "
             f"{'requirement':>16s} {'status':>8s}"]
    for row in rows:
        status = "pass" if row.passed else "FAIL"
        lines.append(f"{row.name:40s} {row.reference:>18s} {row.obtained:>12s} "
                     f"{row.requirement:>16s} {status:>8s}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, f"report_{target}.txt"), "w") as fh:
        fh.write(report)
    print(report, end="")
    return EXIT_OK if all(row.passed for row in rows) else EXIT_CHECK_FAILED


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowdmd",
        description="Koopman embeddings with invertible coupling flows",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate and store a dataset")
    gen.add_argument("--config", required=True, help="experiment config file")
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.add_argument("--out", default=None, help="override the output directory")

    tr = sub.add_parser("train", help="train a flow on a stored dataset")
    tr.add_argument("--config", required=True)
    tr.add_argument("--dataset", default=None,
                    help="dataset file (default: <out>/dataset.txt)")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--out", default=None)
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")

    ev = sub.add_parser("evaluate", help="score methods on the test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--methods", default="flowdmd,exact_dmd",
                    help=f"comma list from {','.join(METHODS)}")
    ev.add_argument("--out", required=True)

    rep = sub.add_parser("reproduce", help="run a named benchmark check")
    rep.add_argument("target", help=f"one of: {', '.join(sorted(REPRODUCE_TARGETS))}")
    rep.add_argument("--out", default="runs/reproduce")
    return parser


def _run(args) -> int:
    if args.command == "generate":
        config = load_config(args.config)
        if args.seed is not None:
            config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
        return cmd_generate(config, out_dir=args.out)
    if args.command == "train":
        config = load_config(args.config)
        if args.seed is not None:
            config = ExperimentConfig.from_dict({**config.to_dict(), "seed": args.seed})
        return cmd_train(config, dataset_path=args.dataset, out_dir=args.out,
                         resume_path=args.resume)
    if args.command == "evaluate":
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        for method in methods:
            if method not in METHODS:
                raise UsageError(f"unknown method {method!r}; choose from {METHODS}")
        return cmd_evaluate(args.checkpoint, args.dataset, methods, args.out)
    if args.command == "reproduce":
        return cmd_reproduce(args.target, args.out)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RankDeficiencyError, SingularScaleError, SolverError,
            TrainingDivergenceError, ZeroReferenceError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DeserializationError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
