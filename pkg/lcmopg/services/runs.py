import csv
import io
import json
import re
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator

from lcmopg.errors import ContractViolation
from lcmopg.objective_space import ParetoArchive

RUN_FORMAT_VERSION = 1
METRICS_COLUMNS = (
    "iteration",
    "test_hv",
    "best_hv",
    "loss",
    "mean_abs_F",
    "mean_episode_length",
    "max_episode_length",
    "seconds",
)
RUN_NAME_RE = re.compile(r"^[\w.\-]+$")


class MetricsRow(BaseModel):
    iteration: int
    # None where the iteration was not monitored or nothing was monitored yet
    test_hv: float | None
    best_hv: float | None
    loss: float
    mean_abs_F: float
    mean_episode_length: float
    max_episode_length: int
    seconds: float


class RunRecord(BaseModel):
    format_version: int = RUN_FORMAT_VERSION
    env_id: str
    variant: str
    seed: int
    run_index: int
    iterations: int
    best_hv: float | None = None
    best_iteration: int | None = None
    final_hv: float | None = None
    pareto_points: int = 0
    wall_clock_seconds: float = 0.0
    diverged_at: int | None = None
    rows: list[MetricsRow] = Field(default_factory=list)

    @field_validator("rows")
    @classmethod
    def _increasing(cls, rows: list[MetricsRow]) -> list[MetricsRow]:
        its = [r.iteration for r in rows]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("metrics rows must be strictly increasing in iteration")
        return rows


def run_name(env_id: str, variant: str, seed: int, run_index: int) -> str:
    return f"{env_id}-{variant}-seed{seed}-run{run_index}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def format_front_csv(archive: ParetoArchive) -> str:
    """return_0..return_{m-1} then latent_0..latent_{d-1}; payloads are the latents."""
    latents = np.array([np.atleast_1d(p) for p in archive.payloads]) if archive.payloads else np.empty((len(archive), 0))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"return_{j}" for j in range(archive.m)] + [f"latent_{j}" for j in range(latents.shape[1])])
    for point, latent in zip(archive.points, latents):
        writer.writerow([_fmt(v) for v in point] + [_fmt(v) for v in latent])
    return buf.getvalue()


def parse_points_csv(text: str, m: int | None = None) -> np.ndarray:
    """Points from CSV text: the ``return_*`` columns when present, else the first ``m`` columns."""
    rows = [row for row in csv.reader(io.StringIO(text)) if row and not row[0].lstrip().startswith("#")]
    if not rows:
        raise ContractViolation("CSV holds no rows")
    header = None
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    if header is not None and any(h.startswith("return_") for h in header):
        cols = [i for i, h in enumerate(header) if h.startswith("return_")]
    else:
        width = len(rows[0]) if rows else 0
        cols = list(range(m if m is not None else width))
    if m is not None and len(cols) != m:
        raise ContractViolation(f"CSV has {len(cols)} objective columns, expected {m}")
    try:
        return np.array([[float(row[i]) for i in cols] for row in rows], dtype=np.float64).reshape(-1, len(cols))
    except (ValueError, IndexError) as e:
        raise ContractViolation(f"Malformed point CSV: {e}") from e


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


class RunStore:
    """Run directories under the output root: writing during training, listing and reading afterwards."""

    def __init__(self, output_root: Path) -> None:
        self._root = Path(output_root).resolve()

    @property
    def root(self) -> Path:
        return self._root

    def _safe_join(self, relative_path: str) -> Path:
        """Resolve relative_path against the output root; raise if outside it."""
        parts = Path(relative_path.lstrip("/\\")).parts
        if any(p == ".." for p in parts):
            raise ValueError("Path traversal not allowed")
        resolved = (self._root / Path(*parts)).resolve()
        try:
            resolved.relative_to(self._root)
        except ValueError:
            raise ValueError("Path outside output root")
        return resolved

    def create_run_dir(self, env_id: str, variant: str, seed: int, run_index: int) -> Path:
        path = self._root / run_name(env_id, variant, seed, run_index)
        path.mkdir(parents=True, exist_ok=True)
        for stale in ("last_finite.pt", "better_half.csv"):
            (path / stale).unlink(missing_ok=True)
        return path

    def write_spec(self, run_dir: Path, spec_text: str) -> Path:
        path = run_dir / "spec.cfg"
        _atomic_write(path, spec_text)
        return path

    def start_metrics(self, run_dir: Path) -> Path:
        path = run_dir / "metrics.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow(METRICS_COLUMNS)
        return path

    def append_metrics(self, run_dir: Path, row: MetricsRow) -> None:
        with open(run_dir / "metrics.csv", "a", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow([_fmt(getattr(row, c)) for c in METRICS_COLUMNS])

    def write_front(self, path: Path, archive: ParetoArchive) -> Path:
        _atomic_write(path, format_front_csv(archive))
        return path

    def write_better_half(self, run_dir: Path, snapshots: list[tuple[int, np.ndarray]], m: int) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration"] + [f"return_{j}" for j in range(m)])
        for iteration, returns in snapshots:
            for point in returns:
                writer.writerow([iteration] + [_fmt(v) for v in point])
        path = run_dir / "better_half.csv"
        _atomic_write(path, buf.getvalue())
        return path

    def write_record(self, run_dir: Path, record: RunRecord) -> Path:
        path = run_dir / "record.json"
        _atomic_write(path, json.dumps(record.model_dump(mode="json"), ensure_ascii=False, indent=2))
        return path

    def read_record(self, run: str) -> RunRecord:
        path = self._run_dir(run) / "record.json"
        if not path.is_file():
            raise FileNotFoundError(f"Run {run!r} has no record")
        return RunRecord.model_validate_json(path.read_text(encoding="utf-8"))

    def _run_dir(self, run: str) -> Path:
        if not RUN_NAME_RE.match(run):
            raise ValueError("Invalid run name")
        path = self._safe_join(run)
        if not path.is_dir():
            raise FileNotFoundError(f"No run {run!r}")
        return path

    def list_runs(self) -> list[dict]:
        """Summaries of every directory holding a record.json, newest first."""
        result = []
        if not self._root.is_dir():
            return result
        for p in self._root.iterdir():
            record_path = p / "record.json"
            if not (p.is_dir() and record_path.is_file()):
                continue
            try:
                record = RunRecord.model_validate_json(record_path.read_text(encoding="utf-8"))
            except (OSError, ValueError):
                continue
            result.append(
                {
                    "run": p.name,
                    "env_id": record.env_id,
                    "variant": record.variant,
                    "seed": record.seed,
                    "run_index": record.run_index,
                    "iterations": record.iterations,
                    "best_hv": record.best_hv,
                    "final_hv": record.final_hv,
                    "diverged_at": record.diverged_at,
                    "mtime": int(record_path.stat().st_mtime),
                }
            )
        result.sort(key=lambda x: (x["mtime"], x["run"]), reverse=True)
        return result

    def list_files(self, run: str) -> list[dict]:
        folder = self._run_dir(run)
        result = []
        for f in sorted(folder.iterdir()):
            if f.is_file() and not f.name.endswith(".tmp"):
                stat = f.stat()
                result.append({"name": f.name, "size": stat.st_size, "mtime": int(stat.st_mtime), "path": f"{run}/{f.name}"})
        return result

    def get_file_path(self, run: str, relative_path: str) -> Path:
        """Return a safe Path for reading; raise if outside the run or missing."""
        self._run_dir(run)
        path = self._safe_join(f"{run}/{relative_path}")
        try:
            path.relative_to(self._root / run)
        except ValueError:
            raise ValueError("Path outside run directory")
        if not path.is_file():
            raise FileNotFoundError("Not a file or not found")
        return path
