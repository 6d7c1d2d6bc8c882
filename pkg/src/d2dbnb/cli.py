"""Command-line pipeline: gen -> solve -> train -> eval, plus diagnostics."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from . import io
from .accel import (SoftDecisionConfig, build_mixed_training_set, dynamic_soft_decision,
                    evaluate_policy, rank_features)
from .bnb import brute_force_oracle, solve_exact
from .classifiers import AlwaysBranch, FnnModel, FnnPolicy, OraclePolicy, SvmPolicy
from .imitate import (DaggerConfig, LabeledProblem, WeightParams, collect_data, dagger_train,
                      to_arrays, tune_omega2)
from .scenario import ScenarioConfig, generate_many, generate_scenario
from .transform import compute_coefficients

log = logging.getLogger("d2dbnb")

# arguments that only locate files; left out of embedded metadata so that
# artifacts do not depend on where they were written
_PATH_ARGS = {"inp", "out", "config", "dataset", "model", "mix", "dataset_out", "nodes"}


class CliError(RuntimeError):
    pass


def stage_seed(master: int, stage: str) -> int:
    """Seed of one pipeline stage, derived from the master seed and the stage name."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1)[0])


def _meta(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in _PATH_ARGS and k != "func"}
    return {"command": args.command, "args": d}


def _load_solved_dir(path) -> list:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"input directory not found: {path}")
    files = sorted(p.glob("*.solved.json"))
    if not files:
        raise CliError(f"no solved instances (*.solved.json) in {path}")
    return [io.load_solved(f)[0] for f in files]


def _load_policy(spec: str, tau):
    if spec == "always-branch":
        return AlwaysBranch(), None
    if not Path(spec).is_file():
        raise CliError(f"model file not found: {spec}")
    model, _ = io.load_model(spec)
    if isinstance(model, FnnModel):
        return FnnPolicy(model, 0.5 if tau is None else tau), model
    return SvmPolicy(model), model


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text()).get("scenario", {})
    base.update(K=args.k, L=args.l, rng_seed=stage_seed(args.seed, f"scenario/{args.set}"))
    if args.bandwidth_hz is not None:
        base["bandwidth_hz"] = args.bandwidth_hz
    if args.uniform_radius is not None:
        base["uniform_radius"] = args.uniform_radius
    cfg = ScenarioConfig.from_dict(base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(args)
    for i, sc in enumerate(generate_many(cfg, args.n)):
        d = io.scenario_to_dict(sc)
        d["meta"] = {**meta, "index": i}
        (out / f"{args.set}_{i:05d}.scenario.json").write_text(io._dumps(d))
    print(f"wrote {args.n} scenarios to {out}")


def cmd_solve(args):
    src = Path(args.inp)
    files = sorted(src.glob("*.scenario.json")) if src.is_dir() else []
    if not files:
        raise CliError(f"no scenario files (*.scenario.json) in {args.inp}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(args)
    total = 0
    for f in files:
        stem = f.name[: -len(".scenario.json")]
        sc = io.load_scenario(f)
        inst = compute_coefficients(sc, stem)
        res = solve_exact(inst, log_nodes=args.log_nodes, branch_one_first=args.branch_one_first)
        io.save_solved(out / f"{stem}.solved.json", LabeledProblem(inst, res), meta)
        if args.log_nodes:
            io.write_node_log(out / f"{stem}.nodes.jsonl", res.node_log)
        total += res.nodes_explored
        log.info("%s: objective %.6f, %d nodes", stem, res.objective, res.nodes_explored)
    print(f"solved {len(files)} instances ({total} nodes) into {out}")


def _weights(args) -> WeightParams:
    return WeightParams(args.A, args.B, args.omega2)


def cmd_collect(args):
    problems = _load_solved_dir(args.inp)
    w = _weights(args)
    samples = []
    for lp in problems:
        if args.policy == "oracle":
            pol = OraclePolicy(lp.exact.rho_star)
        else:
            pol, _ = _load_policy(args.policy, args.tau)
        samples.extend(collect_data(lp.inst, pol, lp.exact.rho_star, w, exclude=lp.exact.fathomed))
    io.save_dataset(args.out, samples, _meta(args))
    print(f"collected {len(samples)} samples from {len(problems)} instances")


def cmd_train(args):
    problems = _load_solved_dir(args.inp)
    if args.mix:
        target = _load_solved_dir(args.mix)
        n_base = len(problems) if args.n_base is None else args.n_base
        n_target = len(target) if args.n_target is None else args.n_target
        problems = build_mixed_training_set(problems, target, n_base, n_target,
                                            stage_seed(args.seed, "mix"))
    svm_hyper = {"C": args.C, "kernel": args.kernel}
    if args.gamma is not None:
        svm_hyper["gamma"] = args.gamma
    cfg = DaggerConfig(
        problems, M=args.M, trainer=args.classifier, svm_hyper=svm_hyper,
        fnn_hyper={"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr},
        tau=args.tau if args.tau is not None else 0.5, seed=stage_seed(args.seed, "train"),
    )
    if args.tune_omega2:
        res = tune_omega2(cfg, WeightParams(args.A, args.B))
    else:
        res = dagger_train(cfg, _weights(args))
    meta = _meta(args)
    meta.update(best_iteration=res.best_iteration, history=res.history,
                omega2=res.weights.omega2_optimal)
    io.save_model(args.out, res.model, meta)
    if args.dataset_out:
        io.save_dataset(args.dataset_out, res.dataset, meta)
    h = res.history[res.best_iteration - 1]
    print(f"trained {args.classifier} policy: iteration {res.best_iteration} of {args.M}, "
          f"{h['n_samples']} samples, validation ogap {h['val_ogap']}, speed {h['val_speed']}")


def cmd_eval(args):
    problems = _load_solved_dir(args.inp)
    if args.model == "oracle":
        raise CliError("the oracle policy is per instance; use 'collect --policy oracle' instead")
    policy, _ = _load_policy(args.model, args.tau)
    rep = evaluate_policy(policy, [p.inst for p in problems], [p.exact for p in problems])
    meta = _meta(args)
    if args.model != "always-branch":
        meta["model_meta"] = io.load_model(args.model)[1]
    text = io.render_report(rep, args.format, meta)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(args):
    problems = _load_solved_dir(args.inp)
    _, model = _load_policy(args.model, None)
    if not isinstance(model, FnnModel):
        raise CliError("the threshold sweep needs an FNN model")
    cfg = SoftDecisionConfig(tau_init=args.tau_init, tau_step=args.tau_step, ogap_max=args.ogap_max,
                             speed_min=args.speed_min, max_iters=args.max_iters)
    res = dynamic_soft_decision([p.inst for p in problems], [p.exact for p in problems], model, cfg)
    meta = _meta(args)
    meta.update(tau=res.tau, met=res.met, conflict=res.conflict, history=res.history)
    text = io.render_report(res.report, args.format, meta)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"final tau {res.tau:.2f}: ogap {res.report.ogap:.4%}, speed {res.report.speed:.3f}"
          f"{'' if res.met else ' (target not met' + (', conflicting targets' if res.conflict else '') + ')'}",
          file=sys.stderr)


def cmd_oracle_check(args):
    rng_seed = stage_seed(args.seed, "oracle-check")
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    failures = 0
    for i in range(args.n):
        K = int(rng.choice(args.k_values))
        L = int(rng.choice(args.l_values))
        sc = generate_scenario(ScenarioConfig(K=K, L=L, rng_seed=int(rng.integers(2**31))))
        inst = compute_coefficients(sc, f"check_{i}")
        exact = solve_exact(inst)
        brute, _ = brute_force_oracle(inst)
        rel = abs(exact.objective - brute) / max(abs(brute), 1e-12)
        worst = max(worst, rel)
        ok = rel <= args.tol
        failures += not ok
        print(f"{i:3d} K={K} L={L} exact={exact.objective:.9g} brute={brute:.9g} rel={rel:.2e} "
              f"{'ok' if ok else 'MISMATCH'}")
    print(f"{args.n - failures}/{args.n} match within {args.tol:g} (worst {worst:.2e})")
    return 0 if failures == 0 else 1


def cmd_rank(args):
    if not Path(args.dataset).is_file():
        raise CliError(f"dataset not found: {args.dataset}")
    samples, _ = io.load_dataset(args.dataset)
    X, y, _ = to_arrays(samples)
    for name, f in rank_features(X, y):
        print(f"{name:<20} {f:.6g}")


# --------------------------------------------------------------------------
# parser


def _int_list(s):
    return [int(v) for v in s.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2dbnb", description=__doc__)
    p.add_argument("--config", help="JSON file with default values for the subcommand flags")
    p.add_argument("--trace-solver", action="store_true", help="log every barrier solve")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="master seed")
        return sp

    def weights(sp):
        sp.add_argument("--A", type=float, default=5.0)
        sp.add_argument("--B", type=float, default=2.68)
        sp.add_argument("--omega2", type=float, default=8.0, choices=[1.0, 2.0, 4.0, 8.0])

    g = common(sub.add_parser("gen", help="generate random scenarios"))
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--l", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--set", default="train", help="name of the set; enters the scenario seed")
    g.add_argument("--out", required=True)
    g.add_argument("--bandwidth-hz", type=float)
    g.add_argument("--uniform-radius", action=argparse.BooleanOptionalAction, default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve scenarios exactly")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log-nodes", action="store_true", help="also write per-node JSON-lines logs")
    s.add_argument("--branch-one-first", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("collect", help="collect a labeled dataset under a policy")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--policy", default="oracle", help="'oracle', 'always-branch' or a model file")
    c.add_argument("--tau", type=float)
    weights(c)
    c.set_defaults(func=cmd_collect)

    t = common(sub.add_parser("train", help="train a prune policy with DAgger"))
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--classifier", choices=["svm", "fnn"], default="svm")
    t.add_argument("--M", type=int, default=4)
    t.add_argument("--C", type=float, default=1.0)
    t.add_argument("--kernel", choices=["linear", "rbf"], default="rbf")
    t.add_argument("--gamma", type=float)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--tau", type=float)
    t.add_argument("--tune-omega2", action="store_true")
    t.add_argument("--mix", help="directory of target-scenario solved instances to mix in")
    t.add_argument("--n-base", type=int)
    t.add_argument("--n-target", type=int)
    t.add_argument("--dataset-out", help="also write the aggregated dataset")
    weights(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a policy against exact results")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--model", required=True, help="model file or 'always-branch'")
    e.add_argument("--tau", type=float)
    e.add_argument("--out")
    e.add_argument("--format", choices=["csv", "pretty"], default="csv")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="dynamic soft-decision threshold control")
    w.add_argument("--in", dest="inp", required=True)
    w.add_argument("--model", required=True)
    w.add_argument("--ogap-max", type=float)
    w.add_argument("--speed-min", type=float)
    w.add_argument("--tau-init", type=float, default=0.5)
    w.add_argument("--tau-step", type=float, default=0.01)
    w.add_argument("--max-iters", type=int, default=100)
    w.add_argument("--out")
    w.add_argument("--format", choices=["csv", "pretty"], default="csv")
    w.set_defaults(func=cmd_sweep)

    o = common(sub.add_parser("oracle-check", help="exact search vs brute-force enumeration"))
    o.add_argument("--n", type=int, default=50)
    o.add_argument("--k-values", type=_int_list, default=[2, 3])
    o.add_argument("--l-values", type=_int_list, default=[1, 2])
    o.add_argument("--tol", type=float, default=1e-4)
    o.set_defaults(func=cmd_oracle_check)

    r = sub.add_parser("rank", help="F-test ranking of the features in a dataset")
    r.add_argument("--dataset", required=True)
    r.set_defaults(func=cmd_rank)
    return p


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` (flags on the command line still win)."""
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return parser.parse_args(argv)
    path = Path(pre.config)
    if not path.is_file():
        raise CliError(f"config file not found: {pre.config}")
    cfg = json.loads(path.read_text())
    section = cfg.get(pre.command, {})
    sub = parser._subparsers._group_actions[0].choices[pre.command]
    known = {a.dest for a in sub._actions}
    unknown = set(section) - known
    if unknown:
        raise CliError(f"unknown keys in config section '{pre.command}': {sorted(unknown)}")
    sub.set_defaults(**section)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.trace_solver:
        logging.getLogger("d2dbnb.relax").setLevel(logging.DEBUG)
        if not args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
    try:
        return args.func(args) or 0
    except (CliError, io.SchemaError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
