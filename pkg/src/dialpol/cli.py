"""Command-line entry point: ``dialpol <command> [options]``.

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from collections import defaultdict

import numpy as np

from . import birl, corpus, rewards, rl, riskmin, sim_env
from .errors import ConfigError, ContractError, ConvergenceError, ValidationError
from .mdp import load_mdp, mdp_from_dict, policy_iteration, value_iteration
from .runs import RunOutput, json_text, load_config, merge, read_features_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValidationError):
    pass


def _emit(args, name, obj, volatile_keys=()):
    """Write ``obj`` as the single result of a command, to --out or stdout."""
    if args.out is None:
        sys.stdout.write(json_text(obj))
        return
    out = RunOutput(args.out, args.command, args.seed, args.force)
    out.write_json(name, obj, volatile_keys)
    out.finish()


def _require_out(args):
    if args.out is None:
        raise UsageError(f"{args.command} writes several files; --out DIR is required")
    return RunOutput(args.out, args.command, args.seed, args.force)


# -- solve / encode / estimate-transitions ---------------------------------

def cmd_solve(args):
    mdp = load_mdp(args.mdp)
    tol = args.tol if args.tol is not None else load_config(args.config).get("tol", 1e-9)
    solver = policy_iteration if args.algo == "pi" else value_iteration
    sol = solver(mdp, tol)
    _emit(args, "solution.json", {
        "algo": args.algo,
        "tol": tol,
        "policy": [int(a) for a in sol.policy],
        "value": [float(x) for x in sol.value],
        "q": [[int(s), int(a), float(x)] for s, a, x in
              zip(mdp.pair_state, mdp.pair_action, sol.q.values)],
    })


def cmd_encode(args):
    space = corpus.StateSpace(args.goals, args.ask_task)
    doc = {"n_goals": space.n_goals, "has_ask_task": space.has_ask_task, "size": space.size}
    if args.vars is not None:
        vars = [int(x) for x in args.vars.split(",")]
        if len(vars) != 5:
            raise UsageError("--vars needs five comma-separated integers")
        doc["vars"] = vars
        doc["id"] = space.encode(vars)
    if args.id is not None:
        doc["id"] = args.id
        doc["vars"] = list(space.decode(args.id))
    doc["actions"] = [str(a) for a in space.action_list]
    _emit(args, "encoding.json", doc)


def _group_logs(path, dialogue=None):
    groups = defaultdict(list)
    for log in corpus.read_logs(path):
        groups[log.id].append(log)
    if dialogue is not None:
        if dialogue not in groups:
            raise UsageError(f"dialogue {dialogue!r} not found in {path}")
        return {dialogue: groups[dialogue]}
    if not groups:
        raise UsageError(f"{path} contains no dialogues")
    return dict(sorted(groups.items()))


def cmd_estimate_transitions(args):
    cfg = merge({"alpha": corpus.DEFAULT_SMOOTHING, "gamma": 0.9},
                load_config(args.config), {"alpha": args.alpha, "gamma": args.gamma})
    out = _require_out(args)
    for did, logs in _group_logs(args.logs, args.dialogue).items():
        space, obs, skel = corpus.build_skeleton(logs, cfg["gamma"], cfg["alpha"])
        rows = corpus.estimate_transitions(obs, space.wait_id, space.size, cfg["alpha"])
        seen = sorted({s for s, a, _ in obs.steps if a == space.wait_id})
        out.write_csv(f"{did}_wait_transitions.csv", ["state", "next_state", "prob"],
                      [(s, s2, float(rows[s, s2])) for s in seen for s2 in range(space.size)])
        out.write_json(f"{did}_skeleton.json", skel.to_dict(include_rewards=False))
        out.write_text(f"{did}_observations.jsonl", corpus.observations_text(obs))
    out.finish()


# -- birl ---------------------------------------------------------------------

def _birl_config(args):
    file_cfg = load_config(args.config)
    file_cfg = file_cfg.get("birl", file_cfg)
    cli = {"iterations": args.iterations, "burn_in": args.burn_in, "alpha_conf": args.alpha_conf,
           "delta": args.delta}
    return birl.BirlConfig.from_dict(merge({}, file_cfg, cli))


def _birl_problems(args):
    """Yield ``(dialogue_id, skeleton, obs, features)``."""
    if args.preset == "synthetic":
        prob = birl.synthetic_problem(args.seed)
        yield "synthetic", prob.skeleton, prob.obs, None
        return
    if args.skeleton is not None:
        if args.observations is None:
            raise UsageError("--skeleton needs --observations")
        with open(args.skeleton) as fh:
            skel = mdp_from_dict(json.load(fh), require_rewards=False)
        obs = corpus.read_observations(args.observations, skel.n_states)
        yield "skeleton", skel, obs, None
        return
    if args.logs is None:
        raise UsageError("birl needs --logs, --skeleton/--observations or --preset synthetic")
    for did, logs in _group_logs(args.logs, args.dialogue).items():
        space, obs, skel = corpus.build_skeleton(logs)
        yield did, skel, obs, space.features()


def cmd_birl(args):
    cfg = _birl_config(args)
    out = _require_out(args)
    report, timings = [], []
    runs = max(1, args.runs)
    for did, skel, obs, feats in _birl_problems(args):
        for run in range(runs):
            seed = args.seed + run
            run_id = f"{did}/{seed}"
            ests = {
                "mbirl": birl.mbirl(skel, obs, cfg, seed, features=feats, record_chain=args.chain),
                "policy_walk": birl.policy_walk(skel, obs, cfg, seed, record_chain=args.chain),
            }
            rewards_by = {k: e.mean_reward for k, e in ests.items()}
            t0 = time.perf_counter()
            rewards_by["locally_optimal"] = birl.locally_optimal_reward(obs, skel.n_states)
            rewards_by["random"] = birl.random_reward(skel.n_states, cfg.r_max, seed)
            base_ms = int(round((time.perf_counter() - t0) * 1000))
            for method in ("mbirl", "policy_walk", "locally_optimal", "random"):
                t1 = time.perf_counter()
                pol = birl.induced_policy(skel, rewards_by[method])
                pi_ms = int(round((time.perf_counter() - t1) * 1000))
                report.append((did, seed, method, birl.policy_loss(pol, obs)))
                fit_ms = ests[method].elapsed_ms if method in ests else base_ms
                timings.append((run_id, seed, method, fit_ms, pi_ms))
            for method, est in ests.items():
                stem = f"{did}_{seed}_{method}"
                out.write_json(f"{stem}_posterior.json", est.to_dict(), ("elapsed_ms",))
                if args.chain:
                    out.write_csv(f"{stem}_chain.csv",
                                  ["iteration", "coordinate", "accepted", "log_posterior"], est.chain)
    report.sort(key=lambda r: (r[0], r[1], r[2]))
    out.write_csv("policy_loss.csv", ["dialogue", "seed", "method", "policy_loss"], report)
    out.write_csv("timings.csv", ["run_id", "seed", "method", "fit_elapsed_ms", "pi_elapsed_ms"],
                  sorted(timings), volatile=True)
    out.write_json("config.json", cfg.to_dict())
    out.finish()


# -- train / eval / benchmark ---------------------------------------------------

TRAIN_DEFAULTS = {
    "tau": 1.0, "epsilon_start": 0.3, "epsilon_decay": 0.995, "epsilon_floor": 0.01,
    "beta": 1.0, "mode": "none", "episodes": 1000, "eval_every": 10, "eval_n": 20,
    "ser": 0.0, "reward": "ts", "learning_rate": 0.2, "gamma": 0.95,
}


def _domain(args, cfg):
    """--domain, else the config's domain, else the one saved with --qtable, else the default."""
    if args.domain is not None:
        return sim_env.load_domain(args.domain)
    if "domain" in cfg:
        return sim_env.SlotDomain.from_dict(cfg["domain"])
    if getattr(args, "qtable", None) is not None:
        with open(args.qtable) as fh:
            saved = json.load(fh).get("domain")
        if saved is not None:
            return sim_env.SlotDomain.from_dict(saved)
    return sim_env.SlotDomain.uniform()


def _estimator(args, reward):
    if reward != "iq":
        return None
    if args.iq_estimator is None:
        raise UsageError("reward 'iq' needs --iq-estimator FILE")
    return rewards.load_iq_estimator(args.iq_estimator)


def _train_one(cfg, domain, estimator, seed, beta):
    env = sim_env.DialogueEnv(domain, cfg["ser"], cfg["reward"], estimator)
    expert = sim_env.HandcraftedExpert(env)
    sampler = rl.SamplerConfig(cfg["tau"], cfg["epsilon_start"], cfg["epsilon_decay"],
                               cfg["epsilon_floor"])
    return rl.train(env, expert, rl.ImitationConfig(cfg["mode"], beta), sampler,
                    int(cfg["episodes"]), seed, cfg["learning_rate"], cfg["gamma"],
                    int(cfg["eval_every"]), int(cfg["eval_n"]))


CURVE_HEADER = ["episode", "success_rate", "avg_turns", "avg_reward"]


def cmd_train(args):
    file_cfg = load_config(args.config)
    cli = {k: getattr(args, k) for k in TRAIN_DEFAULTS if getattr(args, k, None) is not None}
    cfg = merge(TRAIN_DEFAULTS, {k: v for k, v in file_cfg.items() if k != "domain"}, cli)
    unknown = set(cfg) - set(TRAIN_DEFAULTS) - {"betas"}
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    domain = _domain(args, file_cfg)
    estimator = _estimator(args, cfg["reward"])
    betas = args.betas if args.betas is not None else cfg.get("betas")
    if args.preset == "beta-sweep" and betas is None:
        betas = [0.0, 0.25, 0.5, 0.75, 1.0]
    out = _require_out(args)
    if betas is None:
        table, curve = _train_one(cfg, domain, estimator, args.seed, cfg["beta"])
        out.write_csv("learning_curve.csv", CURVE_HEADER,
                      [[r[k] for k in CURVE_HEADER] for r in curve])
        out.write_json("qtable.json", {"domain": domain.to_dict(), **table.to_dict()})
    else:
        for beta in betas:
            table, curve = _train_one(cfg, domain, estimator, args.seed, float(beta))
            tag = f"beta_{float(beta):g}"
            out.write_csv(f"learning_curve_{tag}.csv", CURVE_HEADER,
                          [[r[k] for k in CURVE_HEADER] for r in curve])
            out.write_json(f"qtable_{tag}.json", {"domain": domain.to_dict(), **table.to_dict()})
    out.write_json("config.json", {**cfg, "betas": betas, "domain": domain.to_dict(),
                                   "seed": args.seed})
    out.finish()


def _policy_table(args, env):
    if args.qtable is None:
        return sim_env.HandcraftedExpert(env).table
    with open(args.qtable) as fh:
        table = rl.QTable.from_dict(json.load(fh))
    if table.q.shape != (env.n_states, env.n_actions):
        raise UsageError("Q-table does not match the domain")
    return table.greedy()


def cmd_eval(args):
    file_cfg = load_config(args.config)
    domain = _domain(args, file_cfg)
    ser = args.ser if args.ser is not None else file_cfg.get("ser", 0.0)
    reward = args.reward or file_cfg.get("reward", "ts")
    env = sim_env.DialogueEnv(domain, ser, reward, _estimator(args, reward))
    n = args.n if args.n is not None else file_cfg.get("eval_n", 100)
    stats = sim_env.evaluate(env, _policy_table(args, env), n, args.seed)
    _emit(args, "eval.json", {"ser": ser, "n": n, **stats})


def cmd_benchmark(args):
    file_cfg = load_config(args.config)
    domain = _domain(args, file_cfg)
    reward = args.reward or file_cfg.get("reward", "ts")
    estimator = _estimator(args, reward)
    levels = args.ser_levels or file_cfg.get("ser_levels", list(sim_env.SER_LEVELS))
    n = args.n if args.n is not None else file_cfg.get("eval_n", 100)
    policy = _policy_table(args, sim_env.DialogueEnv(domain, 0.0, reward, estimator))
    rows = sim_env.run_benchmark(policy, domain, levels, n, args.seed, reward, estimator)
    out = _require_out(args)
    header = ["ser", "success_rate", "avg_turns", "avg_reward"]
    out.write_csv("benchmark.csv", header, [[r[k] for k in header] for r in rows])
    out.finish()


# -- riskmin --------------------------------------------------------------------

def cmd_riskmin(args):
    H = read_features_csv(args.features)
    if H.shape[0] == 0:
        raise UsageError(f"{args.features} holds no feature rows")
    with open(args.weights) as fh:
        scorer = riskmin.LinearScorer.from_dict(json.load(fh))
    file_cfg = load_config(args.config)
    cfg = riskmin.RiskConfig.from_dict(merge({}, file_cfg.get("riskmin", file_cfg),
                                             {"delta": args.delta, "iterations": args.iterations}))
    res = riskmin.tune_weights(scorer, H, cfg, args.seed)
    m = riskmin.margin(res.scorer, H)
    out = _require_out(args)
    out.write_json("tuned_weights.json", {
        **res.scorer.to_dict(), "initial_risk": res.initial_risk, "risk": res.risk,
        "margin_skewness": riskmin.skewness(m)})
    out.write_csv("risk_trace.csv", ["iteration", "coordinate", "risk"], res.trace)
    out.finish()


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--config", default=None, help="TOML or JSON config file")
    common.add_argument("--force", action="store_true", help="allow a non-empty --out")

    p = argparse.ArgumentParser(prog="dialpol", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve an MDP JSON file")
    s.add_argument("mdp")
    s.add_argument("--algo", choices=("pi", "vi"), default="pi")
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("encode", parents=[common], help="encode/decode dialogue states")
    s.add_argument("--goals", type=int, required=True)
    s.add_argument("--ask-task", action="store_true")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--vars", help="terminal,sys_goal,user_goal,gen_act,user_help")
    g.add_argument("--id", type=int)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("estimate-transitions", parents=[common],
                       help="smoothed wait transitions and MDP skeletons from logs")
    s.add_argument("logs")
    s.add_argument("--dialogue")
    s.add_argument("--alpha", type=float)
    s.add_argument("--gamma", type=float)
    s.set_defaults(func=cmd_estimate_transitions)

    s = sub.add_parser("birl", parents=[common], help="infer rewards and compare baselines")
    s.add_argument("--logs")
    s.add_argument("--dialogue")
    s.add_argument("--skeleton")
    s.add_argument("--observations", help="JSONL of {state, action} records")
    s.add_argument("--preset", choices=("synthetic",))
    s.add_argument("--runs", type=int, default=1, help="seeds seed..seed+runs-1")
    s.add_argument("--iterations", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--alpha-conf", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--chain", action="store_true", help="also write full chains")
    s.set_defaults(func=cmd_birl)

    s = sub.add_parser("train", parents=[common], help="train a tabular dialogue policy")
    s.add_argument("--domain")
    s.add_argument("--mode", choices=rl.MODES)
    s.add_argument("--beta", type=float)
    s.add_argument("--betas", type=float, nargs="+")
    s.add_argument("--preset", choices=("beta-sweep",))
    s.add_argument("--reward", choices=("ts", "iq"))
    s.add_argument("--iq-estimator")
    s.add_argument("--episodes", type=int)
    s.add_argument("--ser", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--epsilon-start", dest="epsilon_start", type=float)
    s.add_argument("--epsilon-decay", dest="epsilon_decay", type=float)
    s.add_argument("--epsilon-floor", dest="epsilon_floor", type=float)
    s.add_argument("--eval-every", dest="eval_every", type=int)
    s.add_argument("--eval-n", dest="eval_n", type=int)
    s.set_defaults(func=cmd_train)

    for name, func, hlp in (("eval", cmd_eval, "evaluate a policy greedily"),
                            ("benchmark", cmd_benchmark, "evaluate across SER levels")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--domain")
        s.add_argument("--qtable", help="Q-table JSON from train (default: handcrafted)")
        s.add_argument("--reward", choices=("ts", "iq"))
        s.add_argument("--iq-estimator")
        s.add_argument("--n", type=int)
        if name == "eval":
            s.add_argument("--ser", type=float)
        else:
            s.add_argument("--ser-levels", dest="ser_levels", type=float, nargs="+")
        s.set_defaults(func=func)

    s = sub.add_parser("riskmin", parents=[common], help="tune a binary linear scorer")
    s.add_argument("--features", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--delta", type=float)
    s.add_argument("--iterations", type=int)
    s.set_defaults(func=cmd_riskmin)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        args.func(args)
    except ConvergenceError as exc:
        print(f"dialpol: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ContractError, OSError) as exc:
        print(f"dialpol: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
