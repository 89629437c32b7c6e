"""Shared builders for small fixtures used across the test modules."""

from __future__ import annotations

import math

import numpy as np
import pytest

from peerspread._common import NEVER
from peerspread.geonet import PeerNetwork
from peerspread.ingest import EventTimeline, Household


def make_household(hid: str, x: float = 0.0, y: float = 0.0, **kw) -> Household:
    defaults = dict(build_year=1995, value=50_000.0, outdoor_area=400.0,
                    has_pool=False, ownership_pct=0.6)
    defaults.update(kw)
    return Household(id=hid, x=x, y=y, **defaults)


def make_network(n: int, edges) -> PeerNetwork:
    nbrs = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    return PeerNetwork(ids=[f"h{k}" for k in range(n)], metric="euclidean",
                       tau_d=100.0,
                       neighbors=[np.array(sorted(x), dtype=np.int64) for x in nbrs])


def make_timeline(t_e, t_i, horizon: int) -> EventTimeline:
    t_e = np.asarray(t_e, dtype=np.int64)
    t_i = np.asarray(t_i, dtype=np.int64)
    return EventTimeline(ids=[f"h{k}" for k in range(len(t_e))],
                         t_e=t_e, t_i=t_i, study_start=0, horizon=horizon)


def mu_to_lambda(mu: float) -> float:
    """Constant monthly autoinfection probability -> baseline hazard."""
    return -math.log1p(-mu) if mu > 0 else 0.0


@pytest.fixture
def plain_homes():
    def build(n):
        return [make_household(f"h{k}", x=float(k)) for k in range(n)]
    return build
