"""Command-line interface: ``qd3pm <command> [options]``.

Every command writes its tables into ``--out`` (default ``$QD3PM_OUT`` or
``./qd3pm-out``) together with a ``manifest.json`` recording the resolved
configuration, seed and timings. Exit status is 0 on success, 2 for usage or
configuration errors and 1 for runtime failures.

Training settings resolve as: command-line flag, then ``--config`` file, then
the published preset for the dataset and width.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fileio
from .baseline import FactorizedModel, train_factorized
from .datasets import KINDS, DatasetSpec
from .denoiser import TOPOLOGIES, DenoiserCircuit, DenoiserParams, make_topology
from .experiments import PRESETS, preset_jobs, run_jobs
from .metrics import empirical_distribution, kl_divergence, theorem1_report, tv_distance
from .onestep import (TARGET_KINDS, exact_iterative_dist, exact_one_step_dist, iterative_generate,
                      one_step_generate)
from .posterior import (CHOI_WIDTH_LIMIT, MODES, PosteriorSpec, bayes_enumeration,
                        choi_posterior_oracle, posterior_circuit_sim, posterior_dist)
from .schedule import cosine_schedule
from .sim import BitString
from .streams import stream
from .training import (GRAD_METHODS, PRESET_WIDTHS, Objective, TrainConfig, draw_batch,
                       preset_config, train)


class UsageError(Exception):
    """Bad flags or configuration; reported with exit status 2."""


# --------------------------------------------------------------------------
# config resolution

_RUN_KEYS = ("dataset", "n", "model", "rows", "cols", "bijections")


def _convert(name: str, value: str):
    if name == "bandwidths":
        if value.lower() in ("", "mean", "none"):
            return None
        return tuple(float(v) for v in value.replace(",", " ").split())
    if name == "train_size":
        return None if value.lower() == "none" else int(value)
    default = TrainConfig.__dataclass_fields__[name].default
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def load_config_file(path) -> tuple[dict, dict]:
    """Split a key/value file into run keys and ``TrainConfig`` overrides."""
    try:
        kv = fileio.parse_kv(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except fileio.FormatError as exc:
        raise UsageError(f"config file {path}: {exc}") from exc
    names = {f.name for f in fields(TrainConfig)}
    run, train_over = {}, {}
    for key, value in kv.items():
        if key in _RUN_KEYS:
            run[key] = value
        elif key in names:
            try:
                train_over[key] = _convert(key, value)
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        else:
            raise UsageError(f"unknown config key {key!r}")
    return run, train_over


# flag name -> TrainConfig field
_TRAIN_FLAGS = {"batch_size": "batch_size", "iterations": "iterations", "lr_initial": "lr_initial",
                "lr_final": "lr_final", "lr_decay_steps": "lr_decay_steps", "T": "T", "s": "s",
                "layers": "L", "topology": "topology", "mode": "posterior_mode",
                "target_kind": "target_kind", "init_sigma": "init_sigma",
                "grad_method": "grad_method", "train_size": "train_size", "kl_every": "kl_every"}


def resolve_train(args) -> tuple[dict, TrainConfig]:
    file_run, file_train = load_config_file(args.config) if args.config else ({}, {})
    run = {"dataset": "bas", "n": 4, "model": "qd3pm"}
    run.update(file_run)
    for key in ("dataset", "n", "model", "rows", "cols", "bijections"):
        v = getattr(args, key, None)
        if v is not None:
            run[key] = v
    try:
        run["n"] = int(run["n"])
        for key in ("rows", "cols"):
            if run.get(key) is not None:
                run[key] = int(run[key])
    except ValueError as exc:
        raise UsageError(f"bad integer: {exc}") from exc
    if run["dataset"] not in KINDS:
        raise UsageError(f"unknown dataset {run['dataset']!r}")
    if run["model"] not in ("qd3pm", "factorized"):
        raise UsageError(f"unknown model {run['model']!r}")

    over = dict(file_train)
    for flag, name in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            over[name] = v
    if getattr(args, "bandwidths", None) is not None:
        over["bandwidths"] = _convert("bandwidths", args.bandwidths)
    over["seed"] = args.seed
    target_kind = over.get("target_kind", "step-predictor")
    try:
        preset_ds = "mixed-gaussian" if run["dataset"] == "mixed-gaussian" else "bas"
        if run["n"] in PRESET_WIDTHS and (run["dataset"] != "dfc" or target_kind == "x0-predictor"):
            cfg = preset_config(preset_ds, run["n"], target_kind, **over)
        else:
            cfg = TrainConfig(**over)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return run, cfg


def _dataset(run: dict) -> DatasetSpec:
    bij = run.get("bijections")
    if isinstance(bij, str):
        bij = tuple(b.strip() for b in bij.split(",") if b.strip())
    try:
        return DatasetSpec(run["dataset"], run["n"], run.get("rows"), run.get("cols"), bij)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def _out(args) -> Path:
    out = Path(args.out) if args.out else fileio.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> dict:
    run, cfg = resolve_train(args)
    spec = _dataset(run)
    dist = spec.distribution()
    out = _out(args)
    if run["model"] == "factorized":
        h = train_factorized(dist, cfg)
        params, gen, L = h.model.logits.ravel(), h.model.generated_dist(), 0
    else:
        h = train(dist, cfg)
        params, gen, L = h.params.flat(), h.generated, cfg.L
    fileio.write_checkpoint(out / "checkpoint.txt", fileio.Checkpoint(
        run["model"], spec.width, L, cfg.topology, cfg.T, cfg.s, cfg.posterior_mode,
        cfg.target_kind, params))
    fileio.write_csv(out / "loss.csv", ("iteration", "loss", "lr"),
                     zip(range(len(h.losses)), h.losses, h.lrs))
    fileio.write_csv(out / "kl.csv", ("iteration", "kl"), zip(h.kl_iters, h.kl_values))
    fileio.write_distribution(out / "generated.csv", gen)
    fileio.write_distribution(out / "target.csv", dist)
    print(f"final KL(target || generated) = {h.final_kl:.6g} nats")
    return {"run": run, "train": cfg.as_dict()}


def _load_model(path):
    try:
        ck = fileio.read_checkpoint(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint: {exc}") from exc
    except fileio.FormatError as exc:
        raise UsageError(str(exc)) from exc
    sched = cosine_schedule(ck.T, ck.s)
    if ck.model_kind == "factorized":
        return ck, sched, FactorizedModel(ck.params.reshape(ck.N, ck.T, 2))
    topo = make_topology(ck.topology, ck.N)
    return ck, sched, DenoiserParams.from_flat(ck.params, ck.N, ck.L, topo)


def _exact_generated(ck, sched, model, mode: Optional[str]) -> np.ndarray:
    if ck.model_kind == "factorized":
        return model.generated_dist()
    circ = DenoiserCircuit(ck.N, ck.L, make_topology(ck.topology, ck.N), ck.T)
    mode = mode or ("one-step" if ck.target_kind == "x0-predictor" else "iterative")
    if mode == "one-step":
        return exact_one_step_dist(circ, model.flat(), sched)
    return exact_iterative_dist(circ, model.flat(), sched, ck.target_kind, ck.mode)


def _generate(ck, sched, model, mode, count, rng):
    if ck.model_kind == "factorized":
        if mode == "one-step":
            raise UsageError("factorized models only support iterative generation")
        return model.generate(rng, count)
    topo = make_topology(ck.topology, ck.N)
    if mode == "one-step":
        return one_step_generate(model, topo, sched, rng, count)
    return iterative_generate(model, topo, sched, rng, count, ck.target_kind, ck.mode)


def cmd_generate(args) -> dict:
    ck, sched, model = _load_model(args.checkpoint)
    mode = args.mode or ("one-step" if ck.target_kind == "x0-predictor" else "iterative")
    if args.count < 1:
        raise UsageError("--count must be positive")
    samples = _generate(ck, sched, model, mode, args.count, stream(args.seed, "generation"))
    out = _out(args)
    (out / "samples.txt").write_text("".join(f"{s}\n" for s in samples))
    fileio.write_distribution(out / "empirical.csv", empirical_distribution(samples, ck.N))
    return {"checkpoint": str(args.checkpoint), "mode": mode, "count": args.count}


def cmd_eval(args) -> dict:
    ck, sched, model = _load_model(args.checkpoint)
    run = {"dataset": args.dataset, "n": args.n or ck.N, "rows": args.rows, "cols": args.cols,
           "bijections": args.bijections}
    target = _dataset(run).distribution()
    if target.size != 1 << ck.N:
        raise UsageError("dataset width does not match checkpoint")
    gen = _exact_generated(ck, sched, model, args.mode)
    rows = [("kl_exact", kl_divergence(target, gen)), ("tv_exact", tv_distance(target, gen))]
    if args.samples:
        mode = args.mode or ("one-step" if ck.target_kind == "x0-predictor" else "iterative")
        samples = _generate(ck, sched, model, mode, args.samples, stream(args.seed, "generation"))
        emp = empirical_distribution(samples, ck.N)
        rows += [("kl_sampled", kl_divergence(target, emp)), ("tv_sampled", tv_distance(target, emp))]
    out = _out(args)
    fileio.write_csv(out / "eval.csv", ("metric", "value"), rows)
    for name, value in rows:
        print(f"{name} = {value:.6g}")
    return {"checkpoint": str(args.checkpoint), "run": run, "samples": args.samples}


def cmd_dataset_dump(args) -> dict:
    run = {"dataset": args.dataset, "n": args.n, "rows": args.rows, "cols": args.cols,
           "bijections": args.bijections}
    spec = _dataset(run)
    fileio.write_distribution(_out(args) / "dataset.csv", spec.distribution())
    return {"dataset": spec.kind, "n": spec.width, "rows": spec.rows, "cols": spec.cols,
            "bijections": spec.bijections}


def cmd_schedule_dump(args) -> dict:
    try:
        sched = cosine_schedule(args.T, args.s)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = [(t, sched.alpha[t] if t else "", sched.alpha_bar[t]) for t in range(sched.T + 1)]
    fileio.write_csv(_out(args) / "schedule.csv", ("t", "alpha", "alpha_bar"), rows)
    return {"T": args.T, "s": args.s}


def _random_spec(rng, width, sched, mode):
    d = 1 << width
    x0 = BitString.from_index(int(rng.integers(d)), width)
    xt = BitString.from_index(int(rng.integers(d)), width)
    return PosteriorSpec(x0, xt, int(rng.integers(1, sched.T + 1)), sched, mode)


def posterior_report(max_width: int, cases: int, seed: int, sched=None) -> list[tuple]:
    """Max deviations for the formula/circuit/Choi/enumeration cross-checks."""
    sched = sched or cosine_schedule()
    rng = stream(seed, "diffusion")
    rows = []
    for width in range(1, max_width + 1):
        dev = {("circuit-vs-formula", m): 0.0 for m in MODES}
        dev[("enumeration-vs-formula", "bayes-consistent")] = 0.0
        if width <= CHOI_WIDTH_LIMIT:
            dev[("choi-vs-formula", "bayes-consistent")] = 0.0
        for _ in range(cases):
            base = _random_spec(rng, width, sched, "paper-eq17")
            for m in MODES:
                spec = PosteriorSpec(base.x0, base.xt, base.t, sched, m)
                gap = np.max(np.abs(posterior_circuit_sim(spec) - posterior_dist(spec)))
                dev[("circuit-vs-formula", m)] = max(dev[("circuit-vs-formula", m)], gap)
            spec = PosteriorSpec(base.x0, base.xt, base.t, sched, "bayes-consistent")
            ref = posterior_dist(spec)
            key = ("enumeration-vs-formula", "bayes-consistent")
            dev[key] = max(dev[key], np.max(np.abs(bayes_enumeration(spec) - ref)))
            if width <= CHOI_WIDTH_LIMIT:
                key = ("choi-vs-formula", "bayes-consistent")
                rho = choi_posterior_oracle(spec)
                gap = np.max(np.abs(rho - np.diag(ref)))
                dev[key] = max(dev[key], gap)
        rows += [(width, check, mode, cases, float(v)) for (check, mode), v in dev.items()]
    return rows


def cmd_posterior_verify(args) -> dict:
    if not 1 <= args.n <= 10:
        raise UsageError("--n must lie in 1..10")
    rows = posterior_report(args.n, args.cases, args.seed)
    fileio.write_csv(_out(args) / "posterior_verify.csv",
                     ("n", "check", "mode", "cases", "max_deviation"), rows)
    for n, check, mode, _, v in rows:
        print(f"n={n} {check:<24} {mode:<17} max dev {v:.3e}")
    return {"n": args.n, "cases": args.cases}


def gradcheck_report(width: int, layers: int, configs: int, batch: int, seed: int,
                     topology: str = "all-to-all", target_kind: str = "step-predictor") -> list[tuple]:
    """Per random configuration: max |PS - FD| and max |adjoint - PS| on the loss gradient."""
    rng = stream(seed, "init")
    rows = []
    for c in range(configs):
        cfg = TrainConfig(L=layers, topology=topology, target_kind=target_kind, seed=seed)
        obj = Objective(width, cfg)
        theta = rng.normal(0.0, 1.0, size=obj.circ.n_params)
        x0s = rng.integers(obj.d, size=batch)
        b = draw_batch(x0s, width, obj.sched, rng)
        _, g_ps = obj.loss_and_grad(theta, b, "parameter-shift")
        _, g_fd = obj.loss_and_grad(theta, b, "finite-difference")
        _, g_ad = obj.loss_and_grad(theta, b, "adjoint")
        rows.append((c, obj.circ.n_params, float(np.max(np.abs(g_ps - g_fd))),
                     float(np.max(np.abs(g_ad - g_ps)))))
    return rows


def cmd_gradcheck(args) -> dict:
    rows = gradcheck_report(args.n, args.layers, args.configs, args.batch, args.seed,
                            args.topology or "all-to-all", args.target_kind or "step-predictor")
    fileio.write_csv(_out(args) / "gradcheck.csv",
                     ("config", "n_params", "max_ps_vs_fd", "max_adjoint_vs_ps"), rows)
    print(f"max |PS - FD| = {max(r[2] for r in rows):.3e}; "
          f"max |adjoint - PS| = {max(r[3] for r in rows):.3e}")
    return {"n": args.n, "layers": args.layers, "configs": args.configs, "batch": args.batch}


def parse_widths(text: str) -> list[int]:
    """``"2..10"`` or ``"4,6,8"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad width list {text!r}") from exc


def cmd_theorem1(args) -> dict:
    widths = parse_widths(args.n)
    try:
        rows = theorem1_report(widths)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    keys = ("model", "n", "measured", "predicted", "diff", "measured_bits")
    fileio.write_csv(_out(args) / "theorem1.csv", keys, ([r[k] for k in keys] for r in rows))
    for r in rows:
        print(f"{r['model']:<10} n={r['n']:<3} measured {r['measured']:.12f} "
              f"predicted {r['predicted']:.12f} diff {r['diff']:.1e}")
    return {"n": widths}


def cmd_experiment(args) -> dict:
    widths = parse_widths(args.n) if args.n else None
    try:
        jobs = preset_jobs(args.preset, args.seeds, args.seed, widths, args.iterations)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = run_jobs(jobs, args.threads)
    out = _out(args)
    fileio.write_csv(out / "runs.csv", ("label", "model", "dataset", "n", "seed", "final_kl"),
                     ((r.job.label, r.job.model, r.job.dataset, r.job.width, r.job.config.seed,
                       r.final_kl) for r in results))
    fileio.write_csv(out / "kl_curves.csv", ("label", "seed", "iteration", "kl"),
                     ((r.job.label, r.job.config.seed, i, k) for r in results
                      for i, k in zip(r.kl_iters, r.kl_values)))
    fileio.write_csv(out / "loss_curves.csv", ("label", "seed", "iteration", "loss"),
                     ((r.job.label, r.job.config.seed, i, l) for r in results
                      for i, l in enumerate(r.losses)))
    labels = list(dict.fromkeys(r.job.label for r in results))
    summary = []
    for lab in labels:
        kls = [r.final_kl for r in results if r.job.label == lab]
        summary.append((lab, len(kls), float(np.median(kls)), float(np.min(kls)), float(np.max(kls))))
        print(f"{lab:<28} median final KL {summary[-1][2]:.4g}")
    fileio.write_csv(out / "summary.csv", ("label", "runs", "median_kl", "min_kl", "max_kl"), summary)
    return {"preset": args.preset, "seeds": args.seeds, "widths": widths,
            "iterations": args.iterations,
            "jobs": [{"label": j.label, "model": j.model, "config": j.config.as_dict()} for j in jobs]}


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _data_args(parser, dataset=None, n=None):
    # added per subcommand: parent parsers share Action objects, so their
    # defaults cannot differ between commands
    parser.add_argument("--dataset", choices=KINDS, default=dataset)
    parser.add_argument("--n", type=int, default=n, help="number of bits")
    parser.add_argument("--rows", type=int, help="BAS grid rows")
    parser.add_argument("--cols", type=int, help="BAS grid columns")
    parser.add_argument("--bijections", help="comma list of identity/not for dfc")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="maximum worker processes; results do not depend on it")
    common.add_argument("--config", help="key = value file with run and training settings")
    common.add_argument("--out", help=f"output directory (default ${fileio.OUT_ENV} or ./{fileio.DEFAULT_OUT})")

    p = _Parser(prog="qd3pm", description="Quantum discrete denoising diffusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model")
    _data_args(t)
    t.add_argument("--model", choices=("qd3pm", "factorized"))
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--lr-initial", type=float)
    t.add_argument("--lr-final", type=float)
    t.add_argument("--lr-decay-steps", type=int)
    t.add_argument("--T", type=int)
    t.add_argument("--s", type=float)
    t.add_argument("--topology", choices=TOPOLOGIES)
    t.add_argument("--mode", choices=MODES, help="posterior used as the training target")
    t.add_argument("--target-kind", choices=TARGET_KINDS)
    t.add_argument("--init-sigma", type=float)
    t.add_argument("--bandwidths", help="comma list of kernel bandwidths, or 'mean'")
    t.add_argument("--grad-method", choices=GRAD_METHODS)
    t.add_argument("--train-size", type=int)
    t.add_argument("--kl-every", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", parents=[common], help="sample from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--mode", choices=("iterative", "one-step"))
    g.add_argument("--count", type=int, default=10000)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint against a dataset")
    _data_args(e, dataset="bas")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", choices=("iterative", "one-step"))
    e.add_argument("--samples", type=int, default=0, help="also report sampled metrics")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dataset-dump", parents=[common], help="write a target distribution")
    _data_args(d, dataset="bas", n=4)
    d.set_defaults(func=cmd_dataset_dump)

    sc = sub.add_parser("schedule-dump", parents=[common], help="write the noise schedule")
    sc.add_argument("--T", type=int, default=30)
    sc.add_argument("--s", type=float, default=0.008)
    sc.set_defaults(func=cmd_schedule_dump)

    pv = sub.add_parser("posterior-verify", parents=[common], help="posterior cross-checks")
    pv.add_argument("--n", type=int, default=3, help="largest width checked")
    pv.add_argument("--cases", type=_positive_int, default=100)
    pv.set_defaults(func=cmd_posterior_verify)

    gc = sub.add_parser("gradcheck", parents=[common], help="gradient cross-checks")
    gc.add_argument("--n", type=int, default=4)
    gc.add_argument("--layers", type=int, default=2)
    gc.add_argument("--configs", type=_positive_int, default=20)
    gc.add_argument("--batch", type=_positive_int, default=4)
    gc.add_argument("--topology", choices=TOPOLOGIES)
    gc.add_argument("--target-kind", choices=TARGET_KINDS)
    gc.set_defaults(func=cmd_gradcheck)

    th = sub.add_parser("theorem1", parents=[common], help="factorization gap on fully correlated data")
    th.add_argument("--n", default="2..10", help="widths, e.g. 2..10 or 2,4,8")
    th.set_defaults(func=cmd_theorem1)

    ex = sub.add_parser("experiment", parents=[common], help="run a figure preset")
    ex.add_argument("--preset", required=True, choices=PRESETS)
    ex.add_argument("--seeds", type=_positive_int, default=5)
    ex.add_argument("--n", help="restrict widths, e.g. 4,6")
    ex.add_argument("--iterations", type=int, help="override iteration count")
    ex.set_defaults(func=cmd_experiment)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        t0 = time.perf_counter()
        resolved = args.func(args)
        elapsed = time.perf_counter() - t0
        out = Path(args.out) if args.out else fileio.default_out_dir()
        out.mkdir(parents=True, exist_ok=True)
        fileio.write_manifest(out / "manifest.json", args.command, resolved, args.seed,
                              {"seconds": elapsed, "threads": args.threads})
        return 0
    except UsageError as exc:
        print(f"qd3pm: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"qd3pm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
