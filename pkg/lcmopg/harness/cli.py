"""Command-line surface: train, evaluate, oracle, exact-pf, hv, serve.

Exit codes: 0 success, 2 invalid spec or arguments, 3 runtime failure,
4 training divergence.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from lcmopg import logger
from lcmopg.config import get_settings
from lcmopg.envs import ENV_IDS, DstConfig, dst_exact_pf, make_env
from lcmopg.errors import ContractViolation, DivergenceError, LcmopgError
from lcmopg.harness.experiment import run_experiment, summarize
from lcmopg.harness.presets import PUBLISHED, PRESET_NAMES, preset_sections
from lcmopg.harness.spec import DEFAULT_HV_DIVISORS, DEFAULT_REFS, _sections_from_text, apply_overrides, spec_from_sections
from lcmopg.lqg_oracle import oracle_pf, simplex_weights
from lcmopg.objective_space import hypervolume
from lcmopg.policy import check_policy_matches_env, load_policy
from lcmopg.services.runs import RunStore, format_front_csv, parse_points_csv
from lcmopg.trainer import evaluate

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_DIVERGED = 0, 2, 3, 4

_ORACLE_ENVS = {"lqg2d": (2, 0.0), "lqg2d-noisy": (2, 1.0), "lqg3d": (3, 0.0)}


def _parse_ref(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"reference point must be comma-separated numbers, got {text!r}")


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text, encoding="utf-8")


def _report(line: str, output: Path | None) -> None:
    # keep stdout clean for CSV when no output file is given
    print(line, file=sys.stdout if output is not None else sys.stderr)


def _validation_lines(e: ValidationError) -> str:
    return "\n".join(f"{'.'.join(str(p) for p in err['loc']) or 'spec'}: {err['msg']}" for err in e.errors())


def cmd_train(args: argparse.Namespace) -> int:
    try:
        if args.spec is not None:
            sections = _sections_from_text(args.spec.read_text(encoding="utf-8"))
        else:
            if args.env is None:
                raise ContractViolation("either --spec or --env is required")
            sections = preset_sections(args.preset, args.env, args.variant)
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        if args.runs is not None:
            overrides.append(f"experiment.runs={args.runs}")
        if args.beta is not None:
            overrides.append(f"train.beta={args.beta}")
        if args.workers is not None:
            overrides.append(f"train.workers={args.workers}")
        spec = spec_from_sections(apply_overrides(sections, overrides))
    except ValidationError as e:
        print(f"Invalid spec:\n{_validation_lines(e)}", file=sys.stderr)
        return EXIT_INVALID
    except (ContractViolation, OSError, ValueError) as e:
        print(f"Invalid spec: {e}", file=sys.stderr)
        return EXIT_INVALID

    root = args.output_root or spec.output_dir or get_settings().get_output_root_resolved()
    store = RunStore(root)
    try:
        records = run_experiment(spec, store)
    except DivergenceError as e:
        print(f"Diverged: {e} (last finite checkpoint: {e.checkpoint_path})", file=sys.stderr)
        return EXIT_DIVERGED
    except (LcmopgError, OSError) as e:
        print(f"Training failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    s = summarize(records)
    print(
        f"{spec.env_id} {spec.train.variant}: final HV {s['final_hv_mean']:.6g} ± {s['final_hv_std']:.6g}, "
        f"best monitored HV {s['best_hv_mean']:.6g} ± {s['best_hv_std']:.6g} over {s['runs']} run(s) in {store.root}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        policy, meta = load_policy(args.checkpoint)
        env = make_env(args.env)
        check_policy_matches_env(policy, env.descriptor)
        gamma = args.gamma if args.gamma is not None else float(meta.get("gamma", PUBLISHED[args.env].get("gamma", 0.99)))
        ref = args.ref or DEFAULT_REFS[args.env]
        max_steps = args.max_steps
        if max_steps is None:
            max_steps = PUBLISHED[args.env].get("max_episode_len_test")
        archive, hv = evaluate(
            policy,
            lambda: env,
            args.n_lat,
            args.episodes,
            gamma,
            ref,
            np.random.default_rng(args.seed),
            max_steps=max_steps,
            workers=args.workers or get_settings().worker_count,
            hv_divisor=DEFAULT_HV_DIVISORS.get(args.env, 1.0),
        )
    except ContractViolation as e:
        print(f"Invalid arguments: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (LcmopgError, OSError) as e:
        print(f"Evaluation failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(format_front_csv(archive), args.output)
    _report(f"HV {hv!r} ({len(archive)} points)", args.output)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    m, sigma = _ORACLE_ENVS[args.env]
    sigma = args.sigma if args.sigma is not None else sigma
    try:
        archive, hv = oracle_pf(
            m=m,
            xi=args.xi,
            gamma=args.gamma,
            sigma=sigma,
            horizon=args.horizon,
            weight_grid=simplex_weights(m, args.divisions),
            episodes_per_weight=args.episodes,
            rng=np.random.default_rng(args.seed),
        )
    except ContractViolation as e:
        print(f"Invalid arguments: {e}", file=sys.stderr)
        return EXIT_INVALID
    except LcmopgError as e:
        print(f"Oracle failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(format_front_csv(archive).replace("latent_", "weight_"), args.output)
    _report(f"HV {hv!r} ({len(archive)} points)", args.output)
    return EXIT_OK


def cmd_exact_pf(args: argparse.Namespace) -> int:
    preset = args.env.removeprefix("dst-")
    gamma = args.gamma if args.gamma is not None else PUBLISHED[args.env]["gamma"]
    try:
        archive = dst_exact_pf(DstConfig.from_preset(preset), gamma)
        hv = hypervolume(archive.points, DEFAULT_REFS[args.env])
    except LcmopgError as e:
        print(f"Exact PF failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(format_front_csv(archive).replace("latent_0", "treasure"), args.output)
    _report(f"HV {hv!r} ({len(archive)} points)", args.output)
    return EXIT_OK


def cmd_hv(args: argparse.Namespace) -> int:
    try:
        points = parse_points_csv(args.csv.read_text(encoding="utf-8"), len(args.ref))
        hv = hypervolume(points, args.ref)
    except (ContractViolation, OSError) as e:
        print(f"Invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(repr(hv))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("lcmopg.main:app", host=args.host, port=args.port or get_settings().port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcmopg", description="Latent-conditioned multi-objective policy gradient")
    parser.add_argument("--log-level", default=None, help="overrides LCMOPG_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run independent seeded trainings of one experiment")
    p.add_argument("--spec", type=Path, help="experiment spec file")
    p.add_argument("--env", choices=ENV_IDS)
    p.add_argument("--preset", choices=PRESET_NAMES, default="published")
    p.add_argument("--variant", choices=("pg", "pg-v"), default="pg")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-root", type=Path)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a policy checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--env", choices=ENV_IDS, required=True)
    p.add_argument("--n-lat", type=int, default=1500)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--ref", type=_parse_ref)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="LQG Pareto front from Riccati solutions")
    p.add_argument("--env", choices=tuple(_ORACLE_ENVS), default="lqg2d")
    p.add_argument("--xi", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--sigma", type=float)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--divisions", type=int, default=100, help="weights are multiples of 1/divisions")
    p.add_argument("--episodes", type=int, default=2000, help="episodes per weight when sigma > 0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("exact-pf", help="exact Deep Sea Treasure Pareto front")
    p.add_argument("--env", choices=("dst-convex", "dst-original"), required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_exact_pf)

    p = sub.add_parser("hv", help="exact hypervolume of a CSV point set")
    p.add_argument("csv", type=Path)
    p.add_argument("--ref", type=_parse_ref, required=True)
    p.set_defaults(func=cmd_hv)

    p = sub.add_parser("serve", help="run the run-browser web app")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or get_settings().log_level).upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logger.debug("lcmopg %s", args.command)
    return args.func(args)
