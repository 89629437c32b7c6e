"""Household file parsing, event discretization, and neighborhood sampling.

Input schema (``households.csv``)::

    id,x,y,build_year,value,outdoor_area,has_pool,ownership_pct,
    application_date,completion_date,multi_conversion

Dates are ISO-8601 ``YYYY-MM``; an empty string means the event never
happened. Coordinates are planar meters (projected CRS). Rows are never
silently dropped: exclusion flags and a load report let counts reconcile
against the source file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._common import NEVER, format_month, parse_month

HOUSEHOLD_HEADER = [
    "id", "x", "y", "build_year", "value", "outdoor_area", "has_pool",
    "ownership_pct", "application_date", "completion_date", "multi_conversion",
]

_BOOL = {"true": True, "1": True, "false": False, "0": False, "": False}


class IngestError(ValueError):
    """Malformed input file (bad header, unparseable row, duplicate id)."""


@dataclass(frozen=True)
class Household:
    """One parcel: location, covariates, and its (possibly absent) events."""

    id: str
    x: float
    y: float
    build_year: int
    value: float
    outdoor_area: float
    has_pool: bool
    ownership_pct: float
    application_month: Optional[int] = None   # absolute month, parse_month units
    completion_month: Optional[int] = None
    multi_conversion: bool = False

    @property
    def pre2003(self) -> bool:
        return self.build_year <= 2003

    def invalid_reasons(self) -> list[str]:
        """Physically impossible or inconsistent fields; empty when valid."""
        problems = []
        if self.outdoor_area < 0:
            problems.append("negative outdoor_area")
        if not 0.0 <= self.ownership_pct <= 1.0:
            problems.append("ownership_pct outside [0,1]")
        if self.completion_month is not None and self.application_month is None:
            problems.append("completion without application")
        if (self.application_month is not None and self.completion_month is not None
                and self.application_month > self.completion_month):
            problems.append("application after completion")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            problems.append("non-finite coordinates")
        return problems


@dataclass
class LoadReport:
    """Reconciliation counts for one load: rows in = loaded + excluded."""

    n_rows: int = 0
    n_loaded: int = 0
    n_excluded_flag: int = 0
    n_excluded_invalid: int = 0
    messages: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"rows read:          {self.n_rows}",
            f"loaded (analysis):  {self.n_loaded}",
            f"excluded by flag:   {self.n_excluded_flag}",
            f"excluded invalid:   {self.n_excluded_invalid}",
        ]
        lines.extend(self.messages)
        return "\n".join(lines)


def _parse_row(row: dict, line_no: int) -> Household:
    try:
        app = row["application_date"].strip()
        comp = row["completion_date"].strip()
        return Household(
            id=row["id"].strip(),
            x=float(row["x"]),
            y=float(row["y"]),
            build_year=int(row["build_year"]),
            value=float(row["value"]),
            outdoor_area=float(row["outdoor_area"]),
            has_pool=_BOOL[row["has_pool"].strip().lower()],
            ownership_pct=float(row["ownership_pct"]),
            application_month=parse_month(app) if app else None,
            completion_month=parse_month(comp) if comp else None,
            multi_conversion=_BOOL[row["multi_conversion"].strip().lower()],
        )
    except (KeyError, ValueError) as exc:
        raise IngestError(f"line {line_no}: malformed row ({exc})") from exc


def load_households(path) -> tuple[list[Household], dict[str, str], LoadReport]:
    """Parse a households file.

    Returns ``(households, exclusions, report)`` where ``households`` holds
    every parsed row in file order and ``exclusions`` maps household id to
    the reason it is excluded from the analysis set ("flag" or a validity
    problem). Use :func:`analysis_set` to filter.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise IngestError(f"missing households file: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != HOUSEHOLD_HEADER:
            raise IngestError(
                f"unexpected header {reader.fieldnames!r}; expected {HOUSEHOLD_HEADER!r}")
        households: list[Household] = []
        exclusions: dict[str, str] = {}
        report = LoadReport()
        seen: set[str] = set()
        for line_no, row in enumerate(reader, start=2):
            h = _parse_row(row, line_no)
            if h.id in seen:
                raise IngestError(f"line {line_no}: duplicate id {h.id!r}")
            seen.add(h.id)
            report.n_rows += 1
            problems = h.invalid_reasons()
            if problems:
                exclusions[h.id] = "; ".join(problems)
                report.n_excluded_invalid += 1
                report.messages.append(f"line {line_no} ({h.id}): invalid: {exclusions[h.id]}")
            elif h.multi_conversion:
                exclusions[h.id] = "flag"
                report.n_excluded_flag += 1
            else:
                report.n_loaded += 1
            households.append(h)
    return households, exclusions, report


def analysis_set(households: Sequence[Household], exclusions: dict[str, str]) -> list[Household]:
    return [h for h in households if h.id not in exclusions]


def write_households(path, households: Sequence[Household]) -> None:
    """Serialize in the load format; load -> write -> load round-trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HOUSEHOLD_HEADER)
        for h in households:
            writer.writerow([
                h.id, repr(h.x), repr(h.y), h.build_year, repr(h.value),
                repr(h.outdoor_area), "true" if h.has_pool else "false",
                repr(h.ownership_pct),
                format_month(h.application_month) if h.application_month is not None else "",
                format_month(h.completion_month) if h.completion_month is not None else "",
                "true" if h.multi_conversion else "false",
            ])


@dataclass
class EventTimeline:
    """Month-indexed event times over a study window.

    Months are 1-based from ``study_start``; ``t_e``/``t_i`` hold the
    application and completion months. Values <= 0 are pre-study events
    (they seed initial states), NEVER means the event is absent or falls
    after the window.
    """

    ids: list[str]
    t_e: np.ndarray     # int64, month of application
    t_i: np.ndarray     # int64, month of completion
    study_start: int    # absolute month of month index 1
    horizon: int        # T, number of in-window months

    def __post_init__(self):
        self.index = {hid: k for k, hid in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return len(self.ids)

    def initial_states(self, tau_r: int) -> np.ndarray:
        """State at t=0 per household: 'S', 'E', 'I', or 'R'.

        A pre-study completion at month m <= 0 still influences neighbors
        while m + tau_r >= 1; beyond that the household enters recovered.
        """
        states = np.full(self.n, "S", dtype="<U1")
        pre_e = self.t_e <= 0
        states[pre_e] = "E"
        pre_i = pre_e & (self.t_i <= 0)
        states[pre_i & (self.t_i + tau_r >= 1)] = "I"
        states[pre_i & (self.t_i + tau_r < 1)] = "R"
        return states

    def activator_mask(self) -> np.ndarray:
        """Households whose application falls inside the window."""
        return (self.t_e >= 1) & (self.t_e <= self.horizon)

    def participation_curve(self, core_idx: np.ndarray) -> np.ndarray:
        """Observed participating-household ratio at months 1..T (applied)."""
        te = self.t_e[core_idx]
        months = np.arange(1, self.horizon + 1)
        return (te[None, :] <= months[:, None]).mean(axis=1)


def discretize_events(households: Sequence[Household], study_start, study_end) -> EventTimeline:
    """Map calendar events onto 1-based month indices over the study window.

    Events after ``study_end`` become NEVER; events before ``study_start``
    keep their (non-positive) offset so initial states can be derived. Ties
    across households at the same month are preserved.
    """
    start = parse_month(study_start) if isinstance(study_start, str) else int(study_start)
    end = parse_month(study_end) if isinstance(study_end, str) else int(study_end)
    if start > end:
        raise ValueError("study_start after study_end")
    horizon = end - start + 1

    def discretize(event: Optional[int]) -> int:
        if event is None:
            return NEVER
        t = event - start + 1
        return NEVER if t > horizon else t

    t_e = np.array([discretize(h.application_month) for h in households], dtype=np.int64)
    t_i = np.array([discretize(h.completion_month) for h in households], dtype=np.int64)
    # An application with an after-window completion is still an in-window
    # exposure; the household just never turns infectious inside the window.
    return EventTimeline(
        ids=[h.id for h in households], t_e=t_e, t_i=t_i,
        study_start=start, horizon=horizon,
    )


@dataclass(frozen=True)
class NeighborhoodSample:
    """Seed-centered core plus a buffer ring used only for neighbor context."""

    seed_id: str
    core_radius: float
    buffer_radius: float
    core_ids: frozenset[str]
    buffer_ids: frozenset[str]


def select_neighborhood(households: Sequence[Household], seed_id: str,
                        core_radius: float, buffer_radius: float) -> NeighborhoodSample:
    """Core = closed ball of ``core_radius`` around the seed parcel; buffer =
    the ring out to ``core_radius + buffer_radius``. Buffer households feed
    neighbor definitions but are never scored."""
    if core_radius <= 0 or buffer_radius <= 0:
        raise ValueError("radii must be positive")
    by_id = {h.id: h for h in households}
    if seed_id not in by_id:
        raise KeyError(f"unknown seed_id {seed_id!r}")
    seed = by_id[seed_id]
    core, buffer = set(), set()
    outer = core_radius + buffer_radius
    for h in households:
        d = math.hypot(h.x - seed.x, h.y - seed.y)
        if d <= core_radius:
            core.add(h.id)
        elif d <= outer:
            buffer.add(h.id)
    return NeighborhoodSample(
        seed_id=seed_id, core_radius=core_radius, buffer_radius=buffer_radius,
        core_ids=frozenset(core), buffer_ids=frozenset(buffer),
    )
