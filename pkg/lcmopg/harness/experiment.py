import time
from dataclasses import asdict

import numpy as np

from lcmopg import logger
from lcmopg.envs import make_env
from lcmopg.errors import DivergenceError
from lcmopg.harness.spec import ExperimentSpec, serialize_spec
from lcmopg.services.runs import MetricsRow, RunRecord, RunStore
from lcmopg.trainer import TrainConfig, final_evaluation, train_lcmopg, train_lcmopg_v


def run_seed(master_seed: int, run_index: int) -> int:
    """Seed of run ``run_index``; distinct runs get independent streams."""
    return int(np.random.SeedSequence([master_seed, run_index]).generate_state(1)[0])


def run_once(spec: ExperimentSpec, run_index: int, store: RunStore) -> RunRecord:
    config: TrainConfig = spec.train.model_copy(update={"seed": run_seed(spec.train.seed, run_index)})
    env = make_env(spec.env_id, **spec.env)
    run_dir = store.create_run_dir(spec.env_id, config.variant, spec.train.seed, run_index)
    store.write_spec(run_dir, serialize_spec(spec))
    store.start_metrics(run_dir)
    record = RunRecord(
        env_id=spec.env_id,
        variant=config.variant,
        seed=config.seed,
        run_index=run_index,
        iterations=config.iterations,
    )

    def on_iteration(row) -> None:
        values = asdict(row)
        for key in ("test_hv", "best_hv"):
            if not np.isfinite(values[key]):
                values[key] = None
        metrics = MetricsRow(**values)
        record.rows.append(metrics)
        store.append_metrics(run_dir, metrics)

    train = train_lcmopg if config.variant == "pg" else train_lcmopg_v
    started = time.perf_counter()
    try:
        policy, history = train(config, lambda: env, spec.ref, spec.hv_divisor, run_dir, on_iteration)
    except DivergenceError as e:
        record.diverged_at = e.iteration
        record.wall_clock_seconds = time.perf_counter() - started
        store.write_record(run_dir, record)
        raise

    if history.best_state is not None:
        policy.load_state_dict(history.best_state)
    archive, final_hv = final_evaluation(policy, config, lambda: env, spec.ref, spec.hv_divisor)
    store.write_front(run_dir / "pareto_front.csv", archive)
    if config.record_better_half:
        store.write_better_half(run_dir, history.better_half, env.descriptor.m)
    record.best_hv = history.best_hv if history.best_iteration is not None else None
    record.best_iteration = history.best_iteration
    record.final_hv = final_hv
    record.pareto_points = len(archive)
    record.wall_clock_seconds = time.perf_counter() - started
    store.write_record(run_dir, record)
    logger.info(
        "Run %d of %s finished: best monitored HV %s, final HV %.6g over %d PF points (%.1fs)",
        run_index, spec.env_id, record.best_hv, final_hv, len(archive), record.wall_clock_seconds,
    )
    return record


def run_experiment(spec: ExperimentSpec, store: RunStore) -> list[RunRecord]:
    return [run_once(spec, r, store) for r in range(spec.runs)]


def summarize(records: list[RunRecord]) -> dict[str, float]:
    """Mean and population std over runs of the final and best monitored HV."""
    final = np.array([r.final_hv for r in records if r.final_hv is not None], dtype=np.float64)
    best = np.array([r.best_hv for r in records if r.best_hv is not None], dtype=np.float64)
    return {
        "runs": len(records),
        "final_hv_mean": float(final.mean()) if final.size else float("nan"),
        "final_hv_std": float(final.std()) if final.size else float("nan"),
        "best_hv_mean": float(best.mean()) if best.size else float("nan"),
        "best_hv_std": float(best.std()) if best.size else float("nan"),
    }
