"""Command-line entry point tying the library together.

Tasks cover PDE training and evaluation, the finite-difference oracle,
classifier training, attack evaluation, coefficient dumps, and field
diffs.  Every run writes its CSV artifacts plus a ``manifest.json``
recording the config hash, seed, library versions, and wall-clock
timings; the manifest is written on failure paths too.
"""

import argparse
import json
import os
import platform
import sys
import time

import numpy as np

from . import config as cfgmod
from . import report
from .errors import ContractError

TASKS = ("pde-train", "pde-eval", "dvdm", "clf-train", "clf-attack",
         "dump-dynamics", "diff")


def _versions():
    try:
        from importlib.metadata import version

        own = version("sppinn")
    except Exception:
        own = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "sppinn": own,
    }


def _oracle_times(cfg):
    horizon = cfg["problem"]["horizon"]
    dt = cfg["dvdm"]["dt"]
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ContractError(f"horizon {horizon} is not a multiple of dt {dt}")
    return steps, np.linspace(0.0, horizon, steps + 1)


def _export_pinn_field(net, cfg, out, timings):
    from .allen_cahn import energy_series, evaluate_field

    prob = cfgmod.build_problem(cfg)
    _, ts = _oracle_times(cfg)
    t0 = time.perf_counter()
    rows = evaluate_field(net, prob.grid(), ts)
    energies = energy_series(net, ts, prob)
    timings["export_s"] = time.perf_counter() - t0
    return [
        report.write_field_csv(os.path.join(out, "u_field.csv"), rows),
        report.write_energy_csv(os.path.join(out, "energy.csv"), ts, energies),
    ]


def _task_pde_train(args, cfg, out, timings):
    from .allen_cahn import train_pde

    sec = cfg["pde"]
    prob = cfgmod.build_problem(cfg)
    colloc = cfgmod.build_collocation(cfg, args.seed)
    net = cfgmod.build_pde_net(cfg, args.seed)
    weights = cfgmod.build_weights(cfg)
    t0 = time.perf_counter()
    trace = train_pde(
        net, colloc, prob, weights,
        adam_epochs=sec["adam_epochs"], adam_lr=sec["adam_lr"],
        lbfgs_iters=sec["lbfgs_iters"], chunk_times=sec["chunk_times"],
        strc_grid_m=sec["strc_grid_m"] or None,
    )
    timings["train_s"] = time.perf_counter() - t0
    net_path = os.path.join(out, "pde_net.json")
    net.save(net_path)
    artifacts = [report.write_trace_csv(os.path.join(out, "trace.csv"), trace)]
    artifacts += _export_pinn_field(net, cfg, out, timings)
    artifacts.append(net_path)
    return artifacts


def _task_pde_eval(args, cfg, out, timings):
    from .networks import load_checkpoint

    if args.net is None:
        raise ContractError("pde-eval needs --net pointing at a checkpoint")
    net = load_checkpoint(args.net)
    return _export_pinn_field(net, cfg, out, timings)


def _task_dvdm(args, cfg, out, timings):
    from .dvdm import dvdm_solve

    prob = cfgmod.build_problem(cfg)
    steps, ts = _oracle_times(cfg)
    t0 = time.perf_counter()
    sol = dvdm_solve(prob, cfg["dvdm"]["dt"], steps)
    timings["solve_s"] = time.perf_counter() - t0
    timings["newton_iters_max"] = int(sol.newton_iters.max())
    return [
        report.write_field_csv(os.path.join(out, "oracle_field.csv"), sol.field_rows()),
        report.write_energy_csv(os.path.join(out, "energy.csv"), sol.ts, sol.energies),
    ]


def _load_training_set(cfg, limit):
    from .data import cached_pooled_states, ensure_digit_corpus, load_corpus

    sec = cfg["classifier"]
    root = cfg["data"]["root"]
    ensure_digit_corpus(root, n_train=cfg["data"]["synth_train"],
                        n_test=cfg["data"]["synth_test"], seed=0)
    images, labels = load_corpus(root, "train")
    images, labels = images[:limit], labels[:limit]
    states = cached_pooled_states(root, images, (sec["pool_h"], sec["pool_w"]))
    return states, labels


def _task_clf_train(args, cfg, out, timings):
    from .stable_dynamics import alternate_train, save_dynamics

    sec = cfg["classifier"]
    states, labels = _load_training_set(cfg, sec["subset"])
    net = cfgmod.build_classifier(cfg, args.seed)
    dyn = cfgmod.build_dynamics(cfg, args.seed)
    t0 = time.perf_counter()
    history = alternate_train(
        net, dyn, states, labels,
        epochs=sec["epochs"], batch_size=sec["batch_size"],
        adam_lr=sec["adam_lr"],
        lam=(sec["lambda_eqn"], sec["lambda_ini"], sec["lambda_task"]),
        times_per_example=sec["times_per_example"], ridge=sec["ridge"],
        seed=args.seed, use_projected=sec["use_projected"],
        anneal=sec["anneal"],
    )
    timings["train_s"] = time.perf_counter() - t0
    net_path = os.path.join(out, "clf_net.json")
    dyn_path = os.path.join(out, "dynamics.json")
    net.save(net_path)
    save_dynamics(dyn, dyn_path)
    trace = report.write_clf_trace_csv(os.path.join(out, "clf_trace.csv"), history)
    return [trace, net_path, dyn_path]


def _task_clf_attack(args, cfg, out, timings):
    from .attacks import PooledClassifier, evaluate_robustness
    from .data import load_corpus, pooling_matrix
    from .networks import load_checkpoint

    sec = cfg["classifier"]
    net_path = args.net or os.path.join(out, "clf_net.json")
    net = load_checkpoint(net_path)
    images, labels = load_corpus(cfg["data"]["root"], "test")
    limit = cfg["attacks"]["eval_subset"]
    images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    pool = pooling_matrix(images.shape[1:], (sec["pool_h"], sec["pool_w"]))
    model = PooledClassifier(net, pool)
    configs = cfgmod.build_attack_configs(cfg)
    t0 = time.perf_counter()
    rows = evaluate_robustness(model, x, labels, configs, seed=args.seed)
    timings["attack_s"] = time.perf_counter() - t0
    return [report.write_robustness_csv(os.path.join(out, "robustness.csv"), rows)]


def _task_dump_dynamics(args, cfg, out, timings):
    from .stable_dynamics import load_dynamics

    dyn_path = args.dynamics or os.path.join(out, "dynamics.json")
    dyn = load_dynamics(dyn_path)
    return [report.write_alpha_csv(os.path.join(out, "alpha.csv"), dyn.alpha)]


def _task_diff(args, cfg, out, timings):
    if args.a is None or args.b is None:
        raise ContractError("diff needs --a and --b field CSVs")
    return [report.diff_fields(args.a, args.b, os.path.join(out, "diff.csv"))]


_TASK_FNS = {
    "pde-train": _task_pde_train,
    "pde-eval": _task_pde_eval,
    "dvdm": _task_dvdm,
    "clf-train": _task_clf_train,
    "clf-attack": _task_clf_attack,
    "dump-dynamics": _task_dump_dynamics,
    "diff": _task_diff,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sppinn",
        description="Structure-preserving PINN toolkit: PDE solver, "
                    "finite-difference oracle, stable classifier, attacks.",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", default=None, help="INI overlay file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--profile", default="desk", choices=sorted(cfgmod.PROFILES))
        if task in ("pde-eval", "clf-attack"):
            p.add_argument("--net", default=None, help="network checkpoint")
        if task == "dump-dynamics":
            p.add_argument("--dynamics", default=None, help="dynamics checkpoint")
        if task == "diff":
            p.add_argument("--a", default=None, help="first field CSV")
            p.add_argument("--b", default=None, help="second field CSV")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out
    os.makedirs(out, exist_ok=True)
    started = time.time()
    timings = {}
    manifest = {
        "task": args.task,
        "profile": args.profile,
        "seed": args.seed,
        "versions": _versions(),
        "status": "failed",
        "artifacts": [],
        "timings": timings,
    }
    code = 1
    try:
        cfg = cfgmod.load_config(profile=args.profile, path=args.config)
        manifest["config_sha256"] = cfgmod.config_hash(cfg)
        artifacts = _TASK_FNS[args.task](args, cfg, out, timings)
        if cfg["report"]["figures"]:
            csvs = [a for a in artifacts if a.endswith(".csv")]
            artifacts += report.render_figures(csvs, dpi=cfg["report"]["figure_dpi"])
        manifest["artifacts"] = [os.path.basename(a) for a in artifacts]
        manifest["status"] = "ok"
        code = 0
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"sppinn {args.task} failed: {manifest['error']}", file=sys.stderr)
    finally:
        timings["total_s"] = time.time() - started
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return code


if __name__ == "__main__":
    sys.exit(main())
