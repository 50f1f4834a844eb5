"""Batch command-line entry points.

Subcommands write reproducible CSV/JSON artifacts (plus rendered figures)
into the output directory; every run also records a manifest with the seed,
config path, and wall-clock. Exit codes: 0 success, 1 a property or
acceptance check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import dmp as dmp_mod
from . import mdp, reports, rl, segmentation, sim
from .config import load_experiment
from .core import SkillPipeError, load_demonstration, save_demonstration

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _write_manifest(out: Path, subcommand: str, args, seed: int):
    manifest = {
        "subcommand": subcommand,
        "config": getattr(args, "config", None),
        "seed": seed,
        "out": str(out),
        "version": __version__,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _csv(path: Path, header_cols, rows, seed: int):
    lines = [f"# seed={seed}", ",".join(header_cols)]
    for row in rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt_cell(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _json_out(path: Path, obj, seed: int):
    payload = {"seed": seed, **obj} if isinstance(obj, dict) else \
        {"seed": seed, "data": obj}
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = load_experiment(args.config)
    demo, info = exp.generate_demo()
    save_demonstration(demo, out / "demo.csv")
    _json_out(out / "demo_info.json",
              {"phase_boundaries": info["phase_boundaries"],
               "frames": len(demo), "dt": demo.dt}, args.seed)
    _write_manifest(out, "demo", args, args.seed)
    print(f"wrote {out / 'demo.csv'} ({len(demo)} frames)")
    return EXIT_OK


def cmd_segment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = load_experiment(args.config)
    demo = load_demonstration(args.demo)
    prior = exp.seg_prior()
    result = segmentation.map_segment(demo, prior)
    payload = {"segments": result.to_json_obj(demo.hand_id),
               "total_log_map": result.total_log_map}
    _json_out(out / "segments.json", payload, args.seed)
    reports.save_segmentation_figure(demo, result, out / "segmentation.png")
    _write_manifest(out, "segment", args, args.seed)
    for seg in result.segments:
        rel = ",".join(sorted(seg.abstraction.relevant))
        print(f"[{seg.start:4d},{seg.end:4d}] ref={seg.abstraction.reference} "
              f"relevant={{{rel}}}")
    if args.oracle:
        if len(demo) > 14:
            print("--oracle needs a short demonstration (<= 14 frames)",
                  file=sys.stderr)
            return EXIT_USAGE
        brute = segmentation.exhaustive_map_segment(demo, prior)
        same = (
            abs(brute.total_log_map - result.total_log_map) < 1e-9
            and [(s.start, s.end, s.abstraction) for s in brute.segments]
            == [(s.start, s.end, s.abstraction) for s in result.segments])
        print(f"oracle: dp={result.total_log_map:.9f} "
              f"brute={brute.total_log_map:.9f} equal={same}")
        return EXIT_OK if same else EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_learn(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = load_experiment(args.config)
    demo = load_demonstration(args.demo)
    options, specs, report = mdp.run_pipeline(
        demo, exp.world_config(), seg_prior=exp.seg_prior(),
        cost_cfg=exp.cost_config(), learn_cfg=exp.learn_config(seed=args.seed),
        dmp_cfg=exp.dmp_config(), seed=args.seed)

    skills = [mdp.skill_to_json_obj(o, s, demo.hand_id)
              for o, s in zip(options, specs)]
    _json_out(out / "options.json", {"skills": skills}, args.seed)
    _json_out(out / "report.json", report, args.seed)
    for k, seg in enumerate(report["segments"]):
        for a_idx, att in enumerate(seg["attempts"]):
            rows = [(t, c, imm, ter, u) for t, c, imm, ter, u in att["curve"]]
            _csv(out / f"curve_seg{k}_attempt{a_idx}.csv",
                 ["trial", "total_cost", "c_imm_sum", "c_ter", "update"],
                 rows, args.seed)
    reports.save_learning_figure(report, out / "learning_curves.png")
    _write_manifest(out, "learn", args, args.seed)
    for seg in report["segments"]:
        n_att = len(seg["attempts"])
        print(f"segment {seg['index']}: success={seg['final_success_prob']:.2f}"
              f" after {n_att} formulation(s)")
    return EXIT_OK


def cmd_imitate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = load_experiment(args.config)
    data = json.loads(Path(args.options).read_text())
    if not data.get("skills"):
        print("options file contains no skills", file=sys.stderr)
        return EXIT_USAGE
    skills = [mdp.skill_from_json_obj(s, exp.hand_id) for s in data["skills"]]
    wc = exp.world_config()
    demo, _ = exp.generate_demo()
    base = mdp._world_at_frame(demo, 0, wc)

    trials = []
    for k in range(args.trials):
        rng = np.random.default_rng([args.seed, k])
        start = (base if k == 0 else
                 mdp.jittered_start(base, wc, rng))
        if k == 0:
            # private-channel rollout dump for the first option (debug only)
            log = sim.run_policy(wc, start, skills[0][0].policy,
                                 skills[0][1].duration)
            (out / "rollout_trial0_option0.csv").write_text(
                sim.rollout_to_csv(log, exp.hand_id))
        final, betas, _ = mdp.execute_options(skills, wc, start)
        blue, green = final.blocks[exp.blue], final.blocks[exp.green]
        stacked = bool(
            abs(blue.loc[2] - green.loc[2] - exp.block_size) < 1e-6
            and np.linalg.norm(blue.loc[:2] - green.loc[:2]) < exp.block_size / 2)
        trials.append({"trial": k, "betas": betas, "stacked": stacked,
                       "success": bool(all(betas))})
    success_rate = float(np.mean([t["success"] for t in trials]))
    payload = {
        "per_option_success_prob": [o.success_prob for o, _ in skills],
        "trials": trials,
        "success_rate": success_rate,
    }
    _json_out(out / "imitation.json", payload, args.seed)
    _write_manifest(out, "imitate", args, args.seed)
    print(f"imitation success rate {success_rate:.2f} over {args.trials} trials")
    return EXIT_OK


# ---------------------------------------------------------------------------
# policy-search benchmark: 1-D reaching, score under both methods
# ---------------------------------------------------------------------------

BENCH_DURATION = 1.0
BENCH_ROLLOUTS = 505
BENCH_PI2_STD = 40.0
BENCH_POWER_STD = 6.0


def bench_ps_config(seed: int, method: str) -> rl.LearnConfig:
    return rl.LearnConfig(
        first_update_after=10, trials_per_update=5, max_updates=99,
        convergence_delta=0.0,
        exploration_std=(BENCH_PI2_STD if method == "pi2" else BENCH_POWER_STD),
        pi2_h=10.0, rng_seed=seed)


def make_reaching_env(cfg: dmp_mod.DmpConfig, duration: float):
    """1-D reaching from 0 to 1; immediate cost per sample is
    (1 - exp(-0.01 |ydd|)) / n and the return is the per-sample score."""
    xs = dmp_mod.canonical_rollout(cfg, duration)
    basis = dmp_mod.BasisSet.for_config(cfg, duration)
    psi = basis.activations(xs)

    def env(theta: np.ndarray) -> rl.Rollout:
        traj = dmp_mod.integrate(
            cfg, dmp_mod.DmpWeights(np.asarray(theta).ravel(), 0.0, 1.0),
            duration)
        n = traj.ydd.size
        exp_term = np.exp(-0.01 * np.abs(traj.ydd))
        return rl.Rollout(eps=None, theta_abs=None,
                          step_costs=(1.0 - exp_term) / n,
                          terminal_cost=0.0, psi=psi,
                          power_return=float(exp_term.mean()))

    return env


def run_bench_ps(n_seeds: int):
    cfg = dmp_mod.DmpConfig(variant="original", tau=1.0, n_basis=10)
    env = make_reaching_env(cfg, BENCH_DURATION)
    theta0 = np.zeros((1, cfg.n_basis))
    init_score = 1.0 - env(theta0).total_cost
    rows = []
    finals = {"pi2": [], "power": []}
    final_trajs = {"initial": dmp_mod.integrate(
        cfg, dmp_mod.DmpWeights(theta0[0], 0.0, 1.0), BENCH_DURATION)}
    for method in ("pi2", "power"):
        for seed in range(n_seeds):
            lcfg = bench_ps_config(seed, method)
            res = rl.learn(env, theta0, lcfg, method=method)
            for u, cost in enumerate(res.eval_costs):
                rows.append((u, 1.0 - cost, method, seed))
            finals[method].append(1.0 - res.eval_costs[-1])
            if seed == 0:
                final_trajs[method] = dmp_mod.integrate(
                    cfg, dmp_mod.DmpWeights(res.theta_final[0], 0.0, 1.0),
                    BENCH_DURATION)
    return init_score, rows, finals, final_trajs


def cmd_bench_ps(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    init_score, rows, finals, final_trajs = run_bench_ps(args.seeds)
    _csv(out / "bench_ps.csv", ["update", "score", "method", "seed"],
         rows, args.seed)
    for tag, traj in final_trajs.items():
        (out / f"trajectory_{tag}.csv").write_text(
            dmp_mod.trajectory_to_csv(traj))
    med_pi2 = float(np.median(finals["pi2"]))
    med_pow = float(np.median(finals["power"]))
    order_ok = sum(1 for a, b in zip(finals["pi2"], finals["power"])
                   if a > b > init_score)
    summary = {
        "initial_score": init_score,
        "median_final_pi2": med_pi2,
        "median_final_power": med_pow,
        "ordering_ok_seeds": order_ok,
        "n_seeds": args.seeds,
        "rollouts_per_run": BENCH_ROLLOUTS,
        "elapsed_s": time.time() - t0,
    }
    _json_out(out / "bench_ps_summary.json", summary, args.seed)
    reports.save_bench_ps_figure(rows, out / "bench_ps.png")
    _write_manifest(out, "bench-ps", args, args.seed)
    print(f"initial={init_score:.4f} pi2 median={med_pi2:.4f} "
          f"power median={med_pow:.4f} ordering {order_ok}/{args.seeds}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# transformation-system property benchmark
# ---------------------------------------------------------------------------

def run_bench_dmp():
    """Quantify the two failure modes of the goal-scaled formulation and
    their absence in the restructured one. Returns (rows, figure data)."""
    dur, dt = 1.0, 0.001
    y0, g_small, g_big = 0.0, 0.01, 0.03
    t = np.arange(0.0, dur + dt / 2, dt)
    s = t / dur
    mj = 10 * s**3 - 15 * s**4 + 6 * s**5
    demo = y0 + (g_small - y0) * mj + 0.5 * 4.0 * mj * (1 - mj)

    rows = []
    figure_data = {}
    for variant in ("original", "bio"):
        cfg = dmp_mod.DmpConfig(variant=variant, tau=dur)
        w = dmp_mod.fit_from_demo(demo, dt, cfg)
        fit_roll = dmp_mod.integrate(cfg, w, dur)
        big = dmp_mod.DmpWeights(w.w, y0, g_big)
        big_roll = dmp_mod.integrate(cfg, big, dur)
        ratio = np.abs(big_roll.ydd).max() / np.abs(fit_roll.ydd).max()
        blowup = abs(ratio - 3.0) < 0.15

        g_neg = y0 - (g_small - y0)
        zeros = dmp_mod.DmpWeights(np.zeros(cfg.n_basis), y0, g_small)
        zeros_neg = dmp_mod.DmpWeights(np.zeros(cfg.n_basis), y0, g_neg)
        neg = dmp_mod.DmpWeights(w.w, y0, g_neg)
        dev_pos = fit_roll.y - dmp_mod.integrate(cfg, zeros, dur).y
        dev_neg = (dmp_mod.integrate(cfg, neg, dur).y
                   - dmp_mod.integrate(cfg, zeros_neg, dur).y)
        inv_err = float(np.abs(dev_neg + dev_pos).max())
        inverts = inv_err < 1e-9

        rows.append((variant, float(ratio), blowup, inv_err, inverts,
                     "FAIL" if (blowup and inverts) else "PASS"))
        figure_data[variant] = {"t": t, "y_fit": fit_roll.y,
                                "y_goal3": big_roll.y,
                                "dev_pos": dev_pos, "dev_neg": dev_neg}
    return rows, figure_data


def cmd_bench_dmp(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, figure_data = run_bench_dmp()
    _csv(out / "bench_dmp.csv",
         ["variant", "accel_ratio_goal_tripled", "scales_with_goal",
          "inversion_error", "inverts_exactly", "verdict"],
         rows, args.seed)
    reports.save_bench_dmp_figure(figure_data, out / "bench_dmp.png")
    _write_manifest(out, "bench-dmp", args, args.seed)
    ok = True
    for variant, ratio, blowup, inv_err, inverts, verdict in rows:
        print(f"{variant:9s}: accel ratio {ratio:.3f} "
              f"inversion err {inv_err:.2e} -> {verdict}")
        if variant == "original" and verdict != "FAIL":
            ok = False
        if variant == "bio" and verdict != "PASS":
            ok = False
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="skillpipe",
        description="imitation-learning pipeline for tabletop manipulation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        if config:
            sp.add_argument("--config", default=None,
                            help="flat key=value experiment config")

    sp = sub.add_parser("demo", help="generate the scripted demonstration")
    common(sp)
    sp.set_defaults(fn=cmd_demo)

    sp = sub.add_parser("segment", help="segment a demonstration file")
    sp.add_argument("demo", help="demonstration CSV")
    sp.add_argument("--oracle", action="store_true",
                    help="also run the exhaustive oracle (short demos only)")
    common(sp)
    sp.set_defaults(fn=cmd_segment)

    sp = sub.add_parser("learn", help="run the full formulation/learning pipeline")
    sp.add_argument("demo", help="demonstration CSV")
    common(sp)
    sp.set_defaults(fn=cmd_learn)

    sp = sub.add_parser("imitate", help="execute learned options sequentially")
    sp.add_argument("options", help="options JSON from the learn command")
    sp.add_argument("--trials", type=int, default=10)
    common(sp)
    sp.set_defaults(fn=cmd_imitate)

    sp = sub.add_parser("bench-ps", help="policy-search comparison benchmark")
    sp.add_argument("--seeds", type=int, default=10)
    common(sp, config=False)
    sp.set_defaults(fn=cmd_bench_ps)

    sp = sub.add_parser("bench-dmp", help="transformation-system properties")
    common(sp, config=False)
    sp.set_defaults(fn=cmd_bench_dmp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (FileNotFoundError, KeyError, ValueError, SkillPipeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
