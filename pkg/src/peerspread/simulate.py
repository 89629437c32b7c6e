"""Forward Monte Carlo of the adoption process and prediction scoring.

Updates are synchronous: at month t every susceptible house draws against
the hazard computed from month t-1 states, newly exposed houses turn
infectious after a sampled application-to-completion lag, and infectious
houses recover after tau_R months. One seeded PCG64 stream per realization
makes trajectories bit-reproducible for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ._common import NEVER, format_month, parse_month, realization_rng, thread_map, write_csv
from .epimodel import EpidemicParams, covariate_matrix
from .geonet import PeerNetwork, build_network
from .ingest import EventTimeline, Household, discretize_events
from .inference import FitConfig, FitResult, fit_mle


@dataclass
class LagRule:
    """Application-to-completion lag for simulated exposures."""

    kind: str = "fixed"               # "fixed" | "empirical"
    months: int = 2
    pool: Optional[np.ndarray] = None  # observed lags for empirical resampling

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        if self.kind == "fixed":
            return np.full(size, int(self.months), dtype=np.int64)
        if self.kind == "empirical":
            pool = self.pool
            if pool is None or len(pool) == 0:
                return np.full(size, int(self.months), dtype=np.int64)
            return rng.choice(np.asarray(pool, dtype=np.int64), size=size, replace=True)
        raise ValueError(f"unknown lag rule {self.kind!r}")


@dataclass
class SimConfig:
    n_realizations: int = 100
    seed: int = 0
    lag_rule: LagRule = field(default_factory=LagRule)

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("need at least one realization")


@dataclass
class Snapshot:
    """Event state of every network node at the end of ``month``.

    ``t_e`` holds exposure months <= month (NEVER for still-susceptible
    nodes); ``t_i`` holds completion months, which may lie beyond ``month``
    for already-exposed houses whose conversion date is known.
    """

    month: int
    t_e: np.ndarray
    t_i: np.ndarray


def blank_snapshot(n: int) -> Snapshot:
    return Snapshot(month=0,
                    t_e=np.full(n, NEVER, dtype=np.int64),
                    t_i=np.full(n, NEVER, dtype=np.int64))


def snapshot_from_timeline(timeline: EventTimeline, network: PeerNetwork,
                           month: int) -> Snapshot:
    node_to_tl = np.array([timeline.index[i] for i in network.ids], dtype=np.int64)
    te = timeline.t_e[node_to_tl]
    ti = timeline.t_i[node_to_tl]
    exposed = te <= month
    return Snapshot(month=month,
                    t_e=np.where(exposed, te, NEVER),
                    t_i=np.where(exposed, ti, NEVER))


@dataclass
class StateTrajectory:
    """One realized path: exposure/completion month per network node."""

    ids: list[str]
    t_e: np.ndarray
    t_i: np.ndarray
    start_month: int
    horizon: int
    tau_r: int

    def states_at(self, t: int) -> np.ndarray:
        """'S'/'E'/'I'/'R' label per node at month t."""
        out = np.full(len(self.ids), "S", dtype="<U1")
        out[self.t_e <= t] = "E"
        infectious = (self.t_i <= t) & (t <= self.t_i + self.tau_r - 1)
        out[infectious] = "I"
        out[(self.t_i + self.tau_r - 1 < t) & (self.t_i <= t)] = "R"
        return out

    def participation(self, idx: np.ndarray, months: np.ndarray) -> np.ndarray:
        """Fraction of the given nodes that have applied by each month."""
        te = self.t_e[idx]
        return (te[None, :] <= months[:, None]).mean(axis=1)


def simulate_forward(network: PeerNetwork, params: EpidemicParams,
                     hazard_scale: np.ndarray, snapshot: Snapshot, horizon: int,
                     rng: np.random.Generator, lag_rule: LagRule) -> StateTrajectory:
    """Run one realization from ``snapshot.month + 1`` through ``horizon``.

    ``hazard_scale`` is exp(x_i . beta) per network node, so the monthly
    endemic probability is 1 - exp(-lambda0^t * hazard_scale).
    """
    n = network.n
    t_e = snapshot.t_e.copy()
    t_i = snapshot.t_i.copy()
    A = network.adjacency_csr()
    with np.errstate(divide="ignore"):
        log1a = math.log1p(-params.alpha) if params.alpha < 1 else -math.inf
    for t in range(snapshot.month + 1, horizon + 1):
        # neighbors infectious in month t-1 exert pressure now
        infectious_prev = (t_i >= t - params.tau_r) & (t_i <= t - 1)
        n_inf = A @ infectious_prev.astype(np.float64)
        peer = np.where(n_inf > 0, n_inf * log1a, 0.0)
        log_surv = -params.lambda_at(t) * hazard_scale + peer
        hazard = -np.expm1(np.minimum(log_surv, 0.0))
        draws = rng.random(n)
        newly = (t_e == NEVER) & (draws < hazard)
        if np.any(newly):
            idx = np.flatnonzero(newly)
            t_e[idx] = t
            lags = lag_rule.sample(rng, len(idx))
            t_i[idx] = t + lags
    return StateTrajectory(ids=network.ids, t_e=t_e, t_i=t_i,
                           start_month=snapshot.month, horizon=horizon,
                           tau_r=params.tau_r)


@dataclass
class PredictionReport:
    """Mean simulated participation curve with its across-realization SD."""

    model: str
    months: np.ndarray
    i_sim_mean: np.ndarray
    i_sim_sd: np.ndarray
    i_obs: Optional[np.ndarray] = None
    rmse: Optional[float] = None

    @property
    def final_mean(self) -> float:
        return float(self.i_sim_mean[-1])

    @property
    def final_sd(self) -> float:
        return float(self.i_sim_sd[-1])

    @property
    def final_obs(self) -> Optional[float]:
        return None if self.i_obs is None else float(self.i_obs[-1])

    def write_csv(self, path) -> None:
        rows = []
        for k, m in enumerate(self.months):
            rows.append([int(m), self.i_sim_mean[k], self.i_sim_sd[k],
                         self.i_obs[k] if self.i_obs is not None else ""])
        rows.append(["final", self.final_mean, self.final_sd,
                     self.final_obs if self.i_obs is not None else "",
                     ])
        write_csv(path, ["month", "I_sim_mean", "I_sim_sd", "I_obs"], rows)


def monte_carlo_mean(network: PeerNetwork, params: EpidemicParams,
                     hazard_scale: np.ndarray, snapshot: Snapshot, horizon: int,
                     config: SimConfig, core_idx: np.ndarray,
                     observed: Optional[np.ndarray] = None,
                     model: str = "epidemic") -> PredictionReport:
    """Mean and SD of the core participation ratio across realizations.

    Participating means having applied (states E, I, or R). SD is the
    population formula, so deterministic inputs and single realizations
    report 0.
    """
    months = np.arange(snapshot.month + 1, horizon + 1)
    if len(months) == 0:
        raise ValueError("empty simulation window")

    def one(r: int) -> np.ndarray:
        rng = realization_rng(config.seed, r)
        traj = simulate_forward(network, params, hazard_scale, snapshot,
                                horizon, rng, config.lag_rule)
        return traj.participation(core_idx, months)

    curves = np.stack(thread_map(one, range(config.n_realizations)))
    report = PredictionReport(
        model=model, months=months,
        i_sim_mean=curves.mean(axis=0), i_sim_sd=curves.std(axis=0, ddof=0),
        i_obs=None if observed is None else np.asarray(observed, dtype=np.float64),
    )
    if report.i_obs is not None:
        report.rmse = rmse(report.i_sim_mean, report.i_obs)
    return report


def rmse(sim_curve, obs_curve) -> float:
    """Root mean square deviation between two equal-length curves."""
    sim = np.asarray(sim_curve, dtype=np.float64)
    obs = np.asarray(obs_curve, dtype=np.float64)
    if sim.shape != obs.shape or sim.size == 0:
        raise ValueError(f"curve length mismatch: {sim.shape} vs {obs.shape}")
    return float(np.sqrt(np.mean((sim - obs) ** 2)))


def truncate_timeline(timeline: EventTimeline, split: int) -> EventTimeline:
    """Training view: events after the split month are not yet observed."""
    if not 1 <= split < timeline.horizon:
        raise ValueError("split month must lie strictly inside the window")
    return EventTimeline(
        ids=list(timeline.ids),
        t_e=np.where(timeline.t_e <= split, timeline.t_e, NEVER),
        t_i=np.where(timeline.t_i <= split, timeline.t_i, NEVER),
        study_start=timeline.study_start,
        horizon=split,
    )


def observed_lags(timeline: EventTimeline, upto: int) -> np.ndarray:
    """Application-to-completion lags observed by the given month."""
    seen = (timeline.t_e >= 1) & (timeline.t_e <= upto) & (timeline.t_i <= upto) \
        & (timeline.t_i < NEVER)
    return (timeline.t_i[seen] - timeline.t_e[seen]).astype(np.int64)


@dataclass
class CrossValidationResult:
    epidemic: PredictionReport
    endemic: PredictionReport
    fit_epidemic: FitResult
    fit_endemic: FitResult
    split: int
    indistinguishable: bool   # final ratios within one SD of each other

    def ranked(self) -> list[PredictionReport]:
        return sorted([self.epidemic, self.endemic], key=lambda r: (r.rmse, r.model))


def cross_validate(timeline: EventTimeline, network: PeerNetwork,
                   households: Sequence[Household], core_ids,
                   split: int, fit_config: FitConfig, sim_config: SimConfig) -> CrossValidationResult:
    """Fit on months <= split, simulate the test window, score by RMSE.

    Both the peer-effect model and the endemic-only alternative are fitted
    on the training window and simulated forward from the observed state at
    the split month; the verdict notes when their final participation
    ratios sit within one simulation SD of each other.
    """
    if max(fit_config.breakpoints) > split:
        raise ValueError("baseline breakpoints must lie inside the training window")
    train = truncate_timeline(timeline, split)
    fit_epi = fit_mle(train, network, households, core_ids, fit_config)
    fit_end = fit_mle(train, network, households, core_ids,
                      replace(fit_config, fix_alpha=True))

    lag_rule = sim_config.lag_rule
    if lag_rule.kind == "empirical" and lag_rule.pool is None:
        lag_rule = replace(lag_rule, pool=observed_lags(train, split))
        sim_config = replace(sim_config, lag_rule=lag_rule)

    by_id = {h.id: h for h in households}
    net_households = [by_id[i] for i in network.ids]
    core_idx = np.array([network.index[i] for i in core_ids if i in network.index],
                        dtype=np.int64)
    snapshot = snapshot_from_timeline(timeline, network, split)
    months = np.arange(split + 1, timeline.horizon + 1)
    observed = timeline.participation_curve(core_idx)[months - 1]

    reports = {}
    for label, ft in (("epidemic", fit_epi), ("endemic", fit_end)):
        X, _ = covariate_matrix(net_households, ft.stats.names, stats=ft.stats)
        scale = np.exp(X @ ft.beta) if X.shape[1] else np.ones(network.n)
        reports[label] = monte_carlo_mean(
            network, ft.params(), scale, snapshot, timeline.horizon,
            sim_config, core_idx, observed=observed, model=label)

    gap = abs(reports["epidemic"].final_mean - reports["endemic"].final_mean)
    sd = max(reports["epidemic"].final_sd, reports["endemic"].final_sd)
    return CrossValidationResult(
        epidemic=reports["epidemic"], endemic=reports["endemic"],
        fit_epidemic=fit_epi, fit_endemic=fit_end, split=split,
        indistinguishable=bool(gap <= sd),
    )


# ---------------------------------------------------------------------------
# synthetic data generation

def _trunc_normal(rng: np.random.Generator, mean: float, sd: float,
                  floor: float, size: int) -> np.ndarray:
    out = rng.normal(mean, sd, size=size)
    bad = out < floor
    while np.any(bad):  # resample the tail instead of clipping it
        out[bad] = rng.normal(mean, sd, size=int(bad.sum()))
        bad = out < floor
    return out


def grid_households(nx: int, ny: int, spacing: float, seed: int = 0) -> list[Household]:
    """Regular parcel grid with plausible covariates and no events."""
    rng = np.random.default_rng(seed)
    n = nx * ny
    value = _trunc_normal(rng, 50_000.0, 20_000.0, 1_000.0, n)
    area = _trunc_normal(rng, 400.0, 150.0, 10.0, n)
    pool = rng.random(n) < 0.23
    own = rng.uniform(0.3, 1.0, size=n)
    year = rng.integers(1985, 2011, size=n)
    homes = []
    for k in range(n):
        i, j = divmod(k, nx)
        homes.append(Household(
            id=f"H{k:05d}", x=j * spacing, y=i * spacing,
            build_year=int(year[k]), value=float(value[k]),
            outdoor_area=float(area[k]), has_pool=bool(pool[k]),
            ownership_pct=float(own[k]),
        ))
    return homes


def generate_synthetic(households: Sequence[Household], network: PeerNetwork,
                       params: EpidemicParams, covariates: Sequence[str],
                       horizon: int, lag_rule: LagRule, seed: int,
                       study_start: str = "2004-01") -> tuple[list[Household], dict]:
    """Simulate one trajectory and emit it in the ingest schema.

    Returns the event-carrying household list plus a manifest of the
    planted parameters. Completions falling beyond the horizon are left
    absent so that load -> discretize reproduces the generated in-window
    timeline exactly.
    """
    by_id = {h.id: h for h in households}
    net_households = [by_id[i] for i in network.ids]
    X, stats = covariate_matrix(net_households, covariates)
    scale = np.exp(X @ params.beta) if X.shape[1] else np.ones(network.n)
    rng = realization_rng(seed, 0)
    traj = simulate_forward(network, params, scale, blank_snapshot(network.n),
                            horizon, rng, lag_rule)

    start = parse_month(study_start)
    out = []
    for h in households:
        if h.id not in network.index:
            out.append(h)
            continue
        k = network.index[h.id]
        app = comp = None
        if traj.t_e[k] <= horizon:
            app = start + int(traj.t_e[k]) - 1
            if traj.t_i[k] <= horizon:
                comp = start + int(traj.t_i[k]) - 1
        out.append(replace_events(h, app, comp))

    manifest = {
        "planted": {
            "alpha": float(params.alpha),
            "beta": [float(b) for b in params.beta],
            "lambda0": [float(l) for l in params.lambda0],
            "breakpoints": [int(b) for b in params.breakpoints],
            "tau_r": "inf" if params.tau_r >= NEVER else int(params.tau_r),
        },
        "covariates": list(covariates),
        "standardization": stats.to_dict(),
        "lag_rule": {"kind": lag_rule.kind, "months": int(lag_rule.months)},
        "seed": int(seed),
        "study_start": study_start,
        "study_end": format_month(start + horizon - 1),
        "horizon_months": int(horizon),
        "network": {"metric": network.metric, "tau_d_m": network.tau_d,
                    "n_nodes": network.n, "n_edges": len(network.edge_set())},
    }
    return out, manifest


def replace_events(h: Household, application, completion) -> Household:
    return replace(h, application_month=application, completion_month=completion)


def synthetic_grid_study(nx: int, ny: int, spacing: float, tau_d: float,
                         params: EpidemicParams, covariates: Sequence[str],
                         horizon: int, lag_rule: LagRule, seed: int,
                         study_start: str = "2004-01"):
    """Convenience wrapper: grid homes, threshold network, one trajectory.

    Returns (households_with_events, network, timeline, manifest).
    """
    homes = grid_households(nx, ny, spacing, seed=seed)
    ids = [h.id for h in homes]
    network = build_network(homes, ids, "euclidean", tau_d)
    homes_ev, manifest = generate_synthetic(homes, network, params, covariates,
                                            horizon, lag_rule, seed, study_start)
    timeline = discretize_events(homes_ev, manifest["study_start"], manifest["study_end"])
    return homes_ev, network, timeline, manifest
