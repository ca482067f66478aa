"""Command-line entry point: ``train``, ``eval``, ``stepsize`` and ``verify``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides
from .diagnostics import RoundMetrics, compact_form_check, stepsize_bounds, vblocks
from .ltadmm import TrainingHistory, agent_stream, train
from .navenv import NavConfig, NavEnv
from .policynet import PolicyParams, PolicySpec, action_distribution, actions_from_uniforms
from .topology import lambda_bounds, ring_graph

__all__ = ["main", "load_config", "write_metrics_csv", "rollout_episodes", "run_verify"]

_EVAL_STREAM = 7


def load_config(path=None, overrides=(), seed=None) -> RunConfig:
    """Read a JSON config, apply ``--set`` overrides, then the seed override.

    Seed precedence: explicit ``seed`` argument, then ``LTAC_SEED``, then
    the config file.
    """
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    raw = apply_overrides(raw, overrides)
    env_seed = os.environ.get("LTAC_SEED")
    if seed is not None:
        raw["seed"] = int(seed)
    elif env_seed not in (None, ""):
        try:
            raw["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError("LTAC_SEED", f"not an integer: {env_seed!r}") from None
    return RunConfig.from_dict(raw)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics_csv(path, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RoundMetrics.CSV_COLUMNS)
        for m in metrics:
            w.writerow([_fmt(getattr(m, c)) for c in RoundMetrics.CSV_COLUMNS])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default, allow_nan=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = Path(args.out or cfg.out or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)

    def progress(m: RoundMetrics):
        if not args.quiet and (m.round + 1) % max(1, cfg.train.K // 20) == 0:
            print(f"round {m.round + 1}/{cfg.train.K} return {m.return_mean:.4f} consensus {m.consensus_error:.3e}", file=sys.stderr)

    hist = train(cfg, progress=progress)
    write_metrics_csv(out / "metrics.csv", hist.metrics)
    _dump(out / "history.json", hist.to_json())
    _dump(out / "config_echo.json", cfg.to_dict())
    print(f"wrote {out / 'metrics.csv'}, {out / 'history.json'}, {out / 'config_echo.json'}")
    if hist.violations:
        print(f"{len(hist.violations)} invariant violation(s) recorded", file=sys.stderr)
        return 1
    return 0


# evaluation rollouts --------------------------------------------------------------


def rollout_episodes(params: PolicyParams, env_cfg: NavConfig, episodes: int, max_steps: int,
                     greedy: bool, seed: int) -> list[dict]:
    """Roll out ``params`` from fresh random starts; one record per episode.

    An episode succeeds when the summed landmark distance drops below the
    done threshold within ``max_steps`` steps.
    """
    env = NavEnv(env_cfg).with_config(max_steps=max_steps)
    rng = agent_stream(seed, 0, _EVAL_STREAM)
    n = env.n_agents
    out = []
    for ep in range(episodes):
        state = env.reset_from(rng.random(env.reset_draws))
        positions = [state.positions.tolist()]
        rewards = []
        success = False
        steps = 0
        for _ in range(max_steps):
            s = env.observe(state)
            if greedy:
                a = np.array([int(np.argmax(p)) for p in action_distribution(params, s)])
            else:
                a = actions_from_uniforms(params, s, rng.random(n))
            state, r, done = env.step(state, a)
            steps += 1
            positions.append(state.positions.tolist())
            rewards.append(r.tolist())
            if np.linalg.norm(state.positions - state.landmarks, axis=1).sum() < env.cfg.done_threshold:
                success = True
            if done:
                break
        out.append({
            "episode": ep,
            "landmarks": state.landmarks.tolist(),
            "positions": positions,
            "rewards": rewards,
            "steps": steps,
            "success": success,
            "return": float(np.sum(rewards)),
        })
    return out


def cmd_eval(args) -> int:
    with open(args.history) as fh:
        hist = json.load(fh)
    if not hist.get("policy_spec") or not hist.get("omega_bar"):
        raise ConfigError("history", "no policy snapshot in history (quadratic runs have none)")
    spec = PolicySpec.from_dict(hist["policy_spec"])
    params = PolicyParams(spec, np.asarray(hist["omega_bar"], dtype=float))
    env_cfg = NavConfig.from_dict(hist["config"]["env"])
    seed = args.seed if args.seed is not None else int(os.environ.get("LTAC_SEED") or hist["config"].get("seed", 0))
    eps = rollout_episodes(params, env_cfg, args.episodes, args.max_steps, not args.stochastic, seed)
    out = Path(args.out) if args.out else Path(args.history).parent / "trajectories.json"
    _dump(out, {
        "mode": "stochastic" if args.stochastic else "greedy",
        "episodes": args.episodes,
        "max_steps": args.max_steps,
        "seed": seed,
        "success_rate": float(np.mean([e["success"] for e in eps])) if eps else 0.0,
        "trajectories": eps,
    })
    print(f"wrote {out}; success {sum(e['success'] for e in eps)}/{len(eps)}")
    return 0


def cmd_stepsize(args) -> int:
    cfg = load_config(args.config, args.set)
    graph = cfg.graph_obj
    L = args.L if args.L is not None else cfg.diag.L
    rep = stepsize_bounds(L, cfg.train.tau, cfg.train.rho, cfg.train.beta, graph.n, graph)
    d = rep.to_dict()
    for i, a in enumerate(rep.alpha_bars, 1):
        print(f"alpha_bar_{i} = {a:.6g}")
    print(f"alpha_bar   = {rep.alpha_bar:.6g}")
    print(f"beta window = [{rep.beta_window[0]:.6g}, {rep.beta_window[1]:.6g}), beta = {rep.beta}")
    print(f"delta       = {rep.delta:.6g}")
    if rep.warning:
        print(f"warning: {rep.warning}")
    out = Path(args.out) if args.out else Path(cfg.out or ".") / "stepsize.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(out, d)
    print(f"wrote {out}")
    return 0


# verification battery -------------------------------------------------------------


def _quad_cfg(graph_n=3, **train):
    lam_u = lambda_bounds(ring_graph(graph_n))[1]
    t = {"oracle": "quadratic", "K": 10, "tau": 3, "rho": 0.5, "alpha": 0.1, "strict": False}
    t.update(train)
    t.setdefault("beta", 1.5 / (t["tau"] * lam_u * t["rho"]))
    return RunConfig.from_dict({"graph": {"type": "ring", "n": graph_n}, "train": t, "diag": {"cache_compact_form": True}})


def _mp_max(h: TrainingHistory) -> float:
    return max((m.mean_preservation for m in h.metrics), default=0.0)


def run_verify(base: RunConfig | None = None, fault: str | None = None) -> list[tuple[str, bool, str]]:
    """Run the verification battery; returns ``(name, passed, detail)`` per check."""
    results = []

    def record(name, ok, detail):
        results.append((name, bool(ok), detail))

    h = train(_quad_cfg(K=2000), fault=fault)
    target = np.full(3, 1.0 / 3.0)
    dist = float(np.linalg.norm(h.final_omegas - target, axis=1).max())
    ce = h.metrics[-1].consensus_error
    record("quadratic convergence", dist < 1e-6 and ce < 1e-8, f"max dist {dist:.3e}, consensus {ce:.3e}")
    mp = _mp_max(h)
    hq = train(_quad_cfg(K=10), fault=fault)
    res = compact_form_check(hq.compact)
    record("compact form (quadratic)", res < 1e-12, f"residual {res:.3e}")
    mp = max(mp, _mp_max(hq))

    ac = (base.to_dict() if base is not None else
          {"policy": {"hidden": 16}, "critic": {"width": 16}, "sampler": {"burn_in": 20}})
    ac.setdefault("train", {}).update({"oracle": "actor-critic", "K": 10, "strict": False})
    ac.setdefault("diag", {})["cache_compact_form"] = True
    ha = train(RunConfig.from_dict(ac), fault=fault)
    res = compact_form_check(ha.compact)
    record("compact form (actor-critic)", res < 1e-10, f"residual {res:.3e}")
    mp = max(mp, _mp_max(ha))
    record("mean preservation", mp < 1e-12, f"max residual {mp:.3e}")

    rec = max(max((m.mean_recursion for m in x.metrics), default=0.0) for x in (h, hq, ha))
    record("average-iterate recursion", rec < 1e-10, f"max residual {rec:.3e}")

    ok, parts = True, []
    for tau in (1, 3, 5):
        K = 7
        hb = train(_quad_cfg(K=K, tau=tau), fault=fault)
        n_edges = len(ring_graph(3).edges)
        good = hb.ledger.rounds == K and hb.ledger.total == 2 * n_edges * K
        ok &= good
        parts.append(f"tau={tau}: {hb.ledger.rounds} rounds, {hb.ledger.total} msgs")
    record("communication budget", ok, "; ".join(parts))

    kinds = set().union(*(x.ledger.kinds() for x in (h, hq, ha)))
    record("privacy ledger", kinds <= {"policy"}, f"message kinds {sorted(kinds)}")

    rep = stepsize_bounds(1.0, 3, 0.5, 0.25, 5, ring_graph(5))
    worst = max(float(np.abs(V @ Vi - np.eye(3)).max()) for _, V, Vi in vblocks(ring_graph(5), 0.25, 0.5, 3))
    record("step-size calculator", rep.alpha_bars[2] == 0.25 and worst < 1e-10,
           f"alpha_bar_3 {rep.alpha_bars[2]}, max |V V^-1 - I| {worst:.3e}")

    viol = sum(len(x.violations) for x in (h, hq, ha))
    record("strict invariants", viol == 0, f"{viol} violation(s) recorded")
    return results


def cmd_verify(args) -> int:
    base = load_config(args.config, args.set) if args.config or args.set else None
    start = time.perf_counter()
    results = run_verify(base, fault=args.inject_fault)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltac", description="Decentralized LT-ADMM actor-critic")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run training and write metrics")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="roll out the averaged policy from a history file")
    e.add_argument("--history", required=True)
    e.add_argument("--episodes", type=int, default=4)
    e.add_argument("--max-steps", type=int, default=25)
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of taking the argmax")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stepsize", help="evaluate the theoretical step-size bounds")
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--L", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stepsize)

    v = sub.add_parser("verify", help="run the algebraic verification battery")
    v.add_argument("--config")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    v.add_argument("--inject-fault", choices=["flip_bridge_sign"], help="deliberately break the bridge update")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
