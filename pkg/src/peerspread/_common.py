"""Shared plumbing: month arithmetic, the never-event sentinel, deterministic
RNG streams, a thread map with stable ordering, and byte-stable formatting."""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import re
from typing import Callable, Iterable, Sequence

import numpy as np

# Month sentinel for "event never happens". Large enough to dominate any
# horizon, small enough that adding a finite recovery window cannot overflow
# int64.
NEVER = 10**9

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def parse_month(text: str) -> int:
    """Parse an ISO-8601 ``YYYY-MM`` string into an absolute month number."""
    m = _MONTH_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a YYYY-MM month: {text!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return year * 12 + (month - 1)


def format_month(absmonth: int) -> str:
    """Inverse of :func:`parse_month`."""
    year, month = divmod(int(absmonth), 12)
    return f"{year:04d}-{month + 1:02d}"


def parse_tau_r(value) -> int:
    """Recovery window from config: a positive int, or "inf"/null for SEI."""
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity")):
        return NEVER
    if isinstance(value, float) and np.isinf(value):
        return NEVER
    tau = int(value)
    if tau < 1:
        raise ValueError(f"tau_R must be >= 1 or inf, got {value!r}")
    return min(tau, NEVER)


def tau_r_label(tau_r: int) -> str:
    return "inf" if tau_r >= NEVER else str(int(tau_r))


def realization_rng(master_seed: int, realization: int) -> np.random.Generator:
    """One independent PCG64 stream per realization.

    Stream r is identical no matter which thread runs it or how many
    realizations run alongside it, so aggregates are bit-stable.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(realization,))))


def worker_count(default: int = 1) -> int:
    """Thread count from the PEERSPREAD_THREADS environment variable."""
    raw = os.environ.get("PEERSPREAD_THREADS", "")
    if not raw:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"PEERSPREAD_THREADS must be >= 1, got {raw!r}")
    return n


def thread_map(fn: Callable, items: Sequence, n_workers: int | None = None) -> list:
    """Apply ``fn`` to each item, results in input order.

    Work items must be independent; each result lands in a preallocated slot
    so the output is identical for any worker count.
    """
    if n_workers is None:
        n_workers = worker_count()
    items = list(items)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    results = [None] * len(items)
    with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = {pool.submit(fn, item): i for i, item in enumerate(items)}
        for fut in concurrent.futures.as_completed(futures):
            results[futures[fut]] = fut.result()
    return results


def fmt(value) -> str:
    """Byte-stable CSV cell: shortest round-trip repr for floats."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """RFC-4180-style CSV with LF line endings and repr-stable floats."""
    def cell(v):
        s = fmt(v)
        if any(c in s for c in ",\"\n"):
            s = '"' + s.replace('"', '""') + '"'
        return s

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, payload: dict) -> None:
    """Run manifest as canonical JSON (sorted keys, LF)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
