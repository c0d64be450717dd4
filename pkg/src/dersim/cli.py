"""Command-line entry point.

Exit codes: 0 success, 1 a quantitative gate failed, 2 usage or config error.
Every command writes ``manifest.json`` next to its outputs.  The worker count
for parallel experiments defaults to ``$DERSIM_THREADS`` (else 1).
"""
import argparse
from dataclasses import fields
import json
import logging
import os
import sys

import numpy as np

from . import kernels
from .errors import ConfigError, ValidationFailure
from .io import RunManifest, atomic_write_json, read_json

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "DERSIM_THREADS"

log = logging.getLogger("dersim")


def default_workers():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


def _dataclass_from(cls, doc, overrides=None):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = dict(doc)
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _load_doc(path):
    return {} if path is None else read_json(path)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _finish(manifest, out, summary=None):
    if summary is not None:
        manifest.add_output(_write_summary(os.path.join(out, "summary.json"), summary))
    manifest.write(os.path.join(out, "manifest.json"))


def _write_summary(path, summary):
    atomic_write_json(path, summary)
    return path


# ---------------------------------------------------------------- validate

def cmd_validate(args, manifest):
    from . import validation as v

    out = _outdir(args.out)
    doc = _load_doc(args.config)
    workers = args.workers or default_workers()
    if args.which == "buckling":
        gate = {"max_avg_error": doc.pop("max_avg_error", 0.004), "gate_n": doc.pop("gate_n", 140)}
        cfg = _dataclass_from(v.BucklingConfig, doc, {"n_values": args.n, "seed": args.seed})
        manifest.config = {"buckling": _plain(cfg.__dict__), **gate}
        manifest.seed = cfg.seed
        with manifest.time("buckling"):
            results = v.run_helical_buckling(cfg, workers=workers)
        errs = [r.avg_error for r in results]
        decreasing = bool(np.all(np.diff(errs) < 0))
        gated = [r.avg_error for r in results if r.n == gate["gate_n"]]
        within = all(e <= gate["max_avg_error"] for e in gated)
        for name, writer in (("envelope.csv", v.write_envelope_csv),
                             ("buckling_summary.csv", v.write_summary_csv)):
            writer(os.path.join(out, name), results)
            manifest.add_output(os.path.join(out, name))
        for r in results:
            print(f"n={r.n:4d}  avg_error={r.avg_error:.6f}  phi0={r.phi0:.4f}")
        summary = {
            "avg_error": {str(r.n): r.avg_error for r in results},
            "strictly_decreasing": decreasing,
            "gate": gate,
            "gate_checked": bool(gated),
            "within_gate": within,
            "pass": decreasing and within,
        }
    else:
        gate = {"max_deviation_pct": doc.pop("max_deviation_pct", 5.0)}
        ratios = args.ratios or doc.pop("beta_over_alpha", [0.5, 1.0, 1.5])
        cfg = _dataclass_from(v.MichellConfig, doc, {"n": args.n[0] if args.n else None, "seed": args.seed})
        manifest.config = {"michell": _plain(cfg.__dict__), "beta_over_alpha": ratios, **gate}
        manifest.seed = cfg.seed
        with manifest.time("michell"):
            results = v.run_michell(ratios, n=cfg.n, cfg=cfg, workers=workers)
        path = os.path.join(out, "michell.csv")
        v.write_michell_csv(path, results)
        manifest.add_output(path)
        for r in results:
            print(f"beta/alpha={r.beta_over_alpha:.3f}  measured={r.theta_c_measured:.4f}  "
                  f"analytic={r.theta_c_analytic:.4f}  deviation={r.deviation_pct:.2f}%")
        ok = all(r.deviation_pct <= gate["max_deviation_pct"] for r in results)
        summary = {
            "deviation_pct": {str(r.beta_over_alpha): r.deviation_pct for r in results},
            "gate": gate,
            "pass": ok,
        }
    _finish(manifest, out, summary)
    print("PASS" if summary["pass"] else "FAIL")
    return EXIT_OK if summary["pass"] else EXIT_GATE


def _plain(d):
    return json.loads(json.dumps(d, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


# ---------------------------------------------------------------- bench

def cmd_bench(args, manifest):
    from .bench import bench_step, write_bench_csv

    out = _outdir(args.out)
    manifest.config = {"n_values": args.n, "repeats": args.repeats, "steps": args.steps,
                       "backend": args.backend or kernels.NAME}
    with manifest.time("bench"):
        rows = bench_step(args.n, args.repeats, args.steps, backend=args.backend)
    path = os.path.join(out, "bench.csv")
    write_bench_csv(path, rows)
    manifest.add_output(path)
    for r in rows:
        print(f"n={r.n:3d}  without={r.time_without * 1e6:8.1f} us  with={r.time_with * 1e6:8.1f} us  "
              f"overhead={r.overhead_pct:6.2f}%")
    _finish(manifest, out)
    return EXIT_OK


# ---------------------------------------------------------------- fling

def _fling_config(path):
    from .fling import FlingConfig

    return FlingConfig() if path is None else FlingConfig.from_dict(read_json(path))


def cmd_fling(args, manifest):
    from . import fling, policy as pol
    from .io import write_trace_csv

    out = _outdir(args.out)
    cfg = _fling_config(args.config)
    workers = args.workers or default_workers()
    manifest.seed = args.seed
    if args.mode == "train":
        tc = _dataclass_from(pol.TrainConfig, _load_doc(args.train_config), {
            "total_episodes": args.episodes, "seed": args.seed, "batch_size": args.batch_size,
            "workers": workers,
            "alpha_range": tuple(cfg.alpha_range), "beta_range": tuple(cfg.beta_range),
        })
        manifest.config = {"scene": cfg.to_dict(), "train": tc.to_dict()}
        ck = os.path.join(out, "checkpoint.json")
        curve = os.path.join(out, "learning_curve.csv")
        with manifest.time("train"):
            res = pol.train(cfg, tc, checkpoint_path=ck, resume=args.resume, curve_path=curve,
                            progress=lambda r: log.info("batch %d mean reward %.3f", r[0], r[1]))
        policy_path = os.path.join(out, "policy.json")
        atomic_write_json(policy_path, res.policy.to_dict())
        for p in (ck, curve, policy_path):
            manifest.add_output(p)
        rewards = [r[1] for r in res.curve]
        q = max(1, len(rewards) // 4)
        summary = {
            "batches": len(res.curve),
            "first_quartile_mean": float(np.mean(rewards[:q])),
            "final_quartile_mean": float(np.mean(rewards[-q:])),
            "best_eval_reward": res.best_score,
            "diverged_episodes": res.diverged,
        }
        print(json.dumps(summary, indent=2))
        _finish(manifest, out, summary)
        return EXIT_OK

    if args.policy is None:
        raise ConfigError("fling eval needs --policy")
    policy = pol.load_policy(args.policy)
    manifest.config = {"scene": cfg.to_dict(), "policy": args.policy, "episodes": args.episodes,
                       "deterministic": not args.stochastic, "min_success": args.min_success}
    with manifest.time("eval"):
        rate, mean = pol.evaluate(policy, cfg, args.episodes, deterministic=not args.stochastic,
                                  seed=args.seed, workers=workers)
    summary = {"success_rate": rate, "mean_reward": mean, "episodes": args.episodes,
               "min_success": args.min_success, "pass": rate >= args.min_success}
    if args.export_traces:
        tdir = _outdir(os.path.join(out, "traces"))
        log_path = os.path.join(out, "episodes.jsonl")
        if os.path.exists(log_path):
            os.remove(log_path)
        ctx = pol.evaluation_contexts(args.episodes, args.seed, cfg.alpha_range, cfg.beta_range)
        for i, obs in enumerate(ctx):
            a = policy.act(obs)
            r = fling.run_episode(a, cfg, float(obs[0]), float(obs[1]), record_every=1)
            path = os.path.join(tdir, f"episode_{i:03d}.csv")
            write_trace_csv(path, r.trace)
            manifest.add_output(path)
            fling.append_jsonl(log_path, {"episode": i, "action": a.to_dict(), **r.summary()})
        manifest.add_output(log_path)
    print(json.dumps(summary, indent=2))
    _finish(manifest, out, summary)
    return EXIT_OK if summary["pass"] else EXIT_GATE


# ---------------------------------------------------------------- simulate / export

def cmd_simulate(args, manifest):
    from .dynamics import simulate
    from .io import load_simulation, write_trace_csv

    setup = load_simulation(args.config)
    manifest.config = read_json(args.config)
    with manifest.time("simulate"):
        _, trace = simulate(setup.state, setup.params, setup.boundary, setup.scene, setup.steps,
                            setup.dt, record_every=max(1, setup.record_every))
    _outdir(os.path.dirname(os.path.abspath(args.out)))
    write_trace_csv(args.out, trace)
    manifest.add_output(args.out)
    manifest.write(os.path.splitext(args.out)[0] + ".manifest.json")
    print(f"{len(trace)} frames -> {args.out}")
    return EXIT_OK


def cmd_export(args, manifest):
    from .io import read_trace_csv, write_trace_csv, write_trace_obj

    if args.format not in ("csv", "obj"):
        raise ConfigError(f"unknown export format {args.format!r}")
    trace = read_trace_csv(args.trace)
    if args.format == "csv":
        write_trace_csv(args.out, trace)
    else:
        write_trace_obj(args.out, trace, closed=args.closed)
    manifest.config = {"trace": args.trace, "format": args.format}
    manifest.add_output(args.out)
    manifest.write(args.out + ".manifest.json")
    print(f"{len(trace)} frames -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="dersim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="analytic validation experiments")
    v.add_argument("which", choices=["buckling", "michell"])
    v.add_argument("--config", help="JSON document overriding experiment parameters")
    v.add_argument("--out", default="validate_out")
    v.add_argument("--n", type=int, nargs="+", help="discretizations (michell: first value)")
    v.add_argument("--ratios", type=float, nargs="+", help="michell beta/alpha values")
    v.add_argument("--seed", type=int)
    v.add_argument("--workers", type=int)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="per-step cost with and without elastic forces")
    b.add_argument("--n", type=int, nargs="+", default=[20, 30, 40, 50, 60])
    b.add_argument("--repeats", type=int, default=7)
    b.add_argument("--steps", type=int, default=200)
    b.add_argument("--backend", choices=["python", "cython"])
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fling", help="train or evaluate the fling policy")
    f.add_argument("mode", choices=["train", "eval"])
    f.add_argument("--config", help="fling scene JSON")
    f.add_argument("--train-config", help="training hyperparameter JSON")
    f.add_argument("--episodes", type=int)
    f.add_argument("--batch-size", type=int)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--policy", help="checkpoint or policy JSON (eval)")
    f.add_argument("--min-success", type=float, default=0.8)
    f.add_argument("--stochastic", action="store_true", help="sample actions during eval")
    f.add_argument("--export-traces", action="store_true")
    f.add_argument("--resume", action="store_true")
    f.add_argument("--workers", type=int)
    f.add_argument("--out", default="fling_out")
    f.set_defaults(func=cmd_fling)

    s = sub.add_parser("simulate", help="run a rod described by a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="trace.csv")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export", help="convert a trace CSV")
    e.add_argument("trace")
    e.add_argument("--format", default="obj")
    e.add_argument("--closed", action="store_true", help="close each polyline (rings)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fling" and args.mode == "eval" and args.episodes is None:
        args.episodes = 30
    manifest = RunManifest(["dersim"] + argv)
    try:
        return args.func(args, manifest)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
