"""Persistence and batch execution: trace files, manifests, sweeps.

A run directory holds ``trace.csv`` and ``manifest.json``. The manifest carries
the resolved config and the trace's SHA-256, so the pair can be checked and the
run repeated bit for bit. Files are written to a temporary name and renamed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import RunConfig, config_from_dict, config_to_dict
from .engine import TRACE_COLUMNS, RunTrace, Simulation

__all__ = [
    "ManifestError",
    "atomic_write",
    "manifest_path",
    "read_manifest",
    "read_trace",
    "resolve_jobs",
    "run_many",
    "run_to_dir",
    "sha256_file",
    "trace_csv",
    "verify_manifest",
    "write_run",
]

TRACE_FILE = "trace.csv"
MANIFEST_FILE = "manifest.json"


class ManifestError(ValueError):
    pass


def resolve_jobs(jobs: int | None) -> int:
    """Explicit ``jobs``, else ``$DECADAM_JOBS``, else 1."""
    if jobs is None:
        env = os.environ.get("DECADAM_JOBS")
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ValueError(f"DECADAM_JOBS must be an integer, got {env!r}") from None
        else:
            jobs = 1
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    return jobs


def _run_one(args: tuple[RunConfig, bool]) -> RunTrace:
    config, dense = args
    return Simulation(config).run(dense_metrics=dense)


def run_many(configs: list[RunConfig], jobs: int | None = None, dense_metrics: bool = True) -> list[RunTrace]:
    """Run independent configs, returning traces in input order.

    Each run is deterministic on its own, so the result does not depend on
    ``jobs``.
    """
    jobs = resolve_jobs(jobs)
    work = [(c, dense_metrics) for c in configs]
    if jobs == 1 or len(work) <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))


def _fmt(v) -> str:
    # repr round-trips floats exactly
    return repr(float(v)) if isinstance(v, float) else str(v)


def trace_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path: str | Path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / MANIFEST_FILE


def write_run(trace: RunTrace, out_dir: str | Path, started: str | None = None) -> dict:
    """Write ``trace.csv`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    trace_file = out / TRACE_FILE
    atomic_write(trace_file, trace_csv(trace))
    header = trace.header
    summary = {k: v for k, v in trace.summary.items() if k != "wall_seconds"}
    manifest = {
        "version": __version__,
        "seed": header["config"]["seed"],
        "config": header["config"],
        "header": header,
        "summary": summary,
        "spectral_gap": header["topology"]["spectral_gap"],
        "paths": {"trace": TRACE_FILE, "manifest": MANIFEST_FILE},
        "trace_sha256": sha256_file(trace_file),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": trace.summary.get("wall_seconds"),
    }
    atomic_write(manifest_path(out), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_to_dir(config: RunConfig, out_dir: str | Path) -> dict:
    started = datetime.now(timezone.utc).isoformat()
    trace = Simulation(config).run()
    return write_run(trace, out_dir, started)


def read_manifest(out_dir: str | Path) -> dict:
    path = manifest_path(out_dir)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None


def manifest_config(manifest: dict) -> RunConfig:
    return config_from_dict(manifest["config"])


def verify_manifest(out_dir: str | Path) -> bool:
    """True when the trace file hash matches the manifest."""
    m = read_manifest(out_dir)
    return sha256_file(Path(out_dir) / m["paths"]["trace"]) == m["trace_sha256"]


def read_trace(path: str | Path) -> list[dict]:
    """Rows of a trace CSV as dicts with numeric values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ManifestError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({k: (int(v) if k in ("t", "comm_bits_cum", "comm_rounds_cum") else float(v)) for k, v in r.items()})
    return rows


def config_dict(config: RunConfig) -> dict:
    return config_to_dict(config)
