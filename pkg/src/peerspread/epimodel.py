"""Discrete-time SEIR adoption model with autoinfection.

A susceptible house activates in month t with hazard

    h_i(t) = 1 - (1 - mu_i^t) * (1 - alpha)^{n_i^t}

where mu_i^t = 1 - exp(-lambda0^t * exp(x_i . beta)) is the endemic
(autoinfection) probability and n_i^t counts neighbors whose completed
conversion is still visible: a neighbor turning infectious in month m
pressures its peers during months m+1 .. m+tau_R (parallel updates: only
previous-month states act). All updates are synchronous, the time unit is
one calendar month, and R is absorbing.

The per-month hazards make each household's activation time a simple
survival chain, so the joint trajectory probability factorizes over
households and the log-likelihood reduces to a handful of sufficient
statistics (peer-exposure month counts, final-month infectious-neighbor
counts, months-at-risk per baseline segment) that do not depend on the
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._common import NEVER
from .geonet import PeerNetwork
from .ingest import EventTimeline, Household

BOOL_FIELDS = {"has_pool", "pre2003", "post2003", "multi_conversion"}


class ModelEvalError(ValueError):
    """Likelihood produced NaN (invalid parameter/data combination)."""


@dataclass
class EpidemicParams:
    """Transmission probability, covariate loadings, and baseline hazard.

    ``lambda0[s]`` applies from month ``breakpoints[s]`` up to the next
    breakpoint; months past the last breakpoint stay on the last segment.
    ``tau_r`` is the recovery window in months (NEVER = the SEI limit).
    """

    alpha: float
    beta: np.ndarray
    lambda0: np.ndarray
    breakpoints: np.ndarray
    tau_r: int

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        self.lambda0 = np.atleast_1d(np.asarray(self.lambda0, dtype=np.float64))
        self.breakpoints = np.atleast_1d(np.asarray(self.breakpoints, dtype=np.int64))
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0,1], got {self.alpha}")
        if np.any(self.lambda0 < 0):
            raise ValueError("baseline hazard segments must be >= 0")
        if len(self.breakpoints) != len(self.lambda0):
            raise ValueError("one breakpoint month per baseline segment")
        if self.breakpoints[0] != 1:
            raise ValueError("first baseline segment must start at month 1")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.tau_r < 1:
            raise ValueError("tau_r must be >= 1 month")

    def lambda_at(self, t: int) -> float:
        s = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return float(self.lambda0[max(s, 0)])


def autoinfection_prob(xdotb, lambda0_t):
    """Endemic activation probability mu = 1 - exp(-lambda0 * e^{x.b}).

    Exactly 0 when the baseline hazard is 0. An overflowing e^{x.b} yields
    mu = 1, which the likelihood reports as a -inf (rejected) evaluation
    whenever a survival month is involved.
    """
    lam = np.asarray(lambda0_t, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("lambda0 must be >= 0")
    out = -np.expm1(-lam * np.exp(np.asarray(xdotb, dtype=np.float64)))
    return float(out) if out.ndim == 0 else out


def exposure_steps(t_ki, t, tau_r: int):
    """Months in [1, t-1] during which neighbor k pressured the house.

    A neighbor infectious from month t_kI acts on months
    [t_kI+1, t_kI+tau_r]; this counts that interval's overlap with the
    window, so pre-study completions (t_kI <= 0) only contribute their
    in-window remainder. Equals min(t-1-t_kI, tau_r), floored at 0, for
    t_kI >= 0.
    """
    t_ki = np.asarray(t_ki, dtype=np.int64)
    lo = np.maximum(1, t_ki + 1)
    hi = np.minimum(t - 1, t_ki + tau_r)
    out = np.maximum(0, hi - lo + 1)
    return int(out) if out.ndim == 0 else out


def n_infectious(t_ki, t: int, tau_r: int):
    """Neighbors whose pressure window [t_kI+1, t_kI+tau_r] covers month t."""
    t_ki = np.asarray(t_ki, dtype=np.int64)
    return int(np.count_nonzero((t_ki + 1 <= t) & (t <= t_ki + tau_r)))


@dataclass
class NeighborHistory:
    """Infectious-time view of one household's neighbors."""

    neighbor_t_i: np.ndarray
    tau_r: int

    def n_at(self, t: int) -> int:
        return n_infectious(self.neighbor_t_i, t, self.tau_r)

    def exposure_before(self, t: int) -> int:
        return int(np.sum(exposure_steps(self.neighbor_t_i, t, self.tau_r)))


# ---------------------------------------------------------------------------
# covariates

@dataclass
class CovariateStats:
    """Standardization record: continuous fields centered/scaled by the
    training sample, booleans passed through."""

    names: list[str]
    center: np.ndarray
    scale: np.ndarray

    def to_dict(self) -> dict:
        return {"names": list(self.names),
                "center": [float(c) for c in self.center],
                "scale": [float(s) for s in self.scale]}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateStats":
        return cls(names=list(d["names"]),
                   center=np.asarray(d["center"], dtype=np.float64),
                   scale=np.asarray(d["scale"], dtype=np.float64))


def _raw_column(households: Sequence[Household], name: str) -> np.ndarray:
    if name == "post2003":
        return np.array([not h.pre2003 for h in households], dtype=np.float64)
    vals = [getattr(h, name) for h in households]
    return np.asarray(vals, dtype=np.float64)


def covariate_matrix(households: Sequence[Household], names: Sequence[str],
                     stats: Optional[CovariateStats] = None,
                     standardize: bool = True) -> tuple[np.ndarray, CovariateStats]:
    """Assemble the model matrix; reuse ``stats`` to score new data with a
    previously fitted standardization."""
    names = list(names)
    cols = [_raw_column(households, n) for n in names]
    if stats is None:
        center = np.zeros(len(names))
        scale = np.ones(len(names))
        if standardize:
            for k, n in enumerate(names):
                if n in BOOL_FIELDS:
                    continue
                center[k] = cols[k].mean() if len(cols[k]) else 0.0
                sd = cols[k].std() if len(cols[k]) else 1.0
                scale[k] = sd if sd > 0 else 1.0
        stats = CovariateStats(names=names, center=center, scale=scale)
    else:
        if list(stats.names) != names:
            raise ValueError("covariate stats do not match requested names")
    X = np.column_stack(cols) if cols else np.zeros((len(households), 0))
    return (X - stats.center) / stats.scale, stats


# ---------------------------------------------------------------------------
# model data: network + timeline + covariates, with sufficient statistics

@dataclass
class ModelData:
    """Everything a fit needs, with parameter-free statistics precomputed.

    Built for one (network, timeline, covariates, tau_r) combination; the
    scored set is core households that start the window susceptible.
    Buffer households enter only through their neighbors' histories.
    """

    network: PeerNetwork
    timeline: EventTimeline
    X: np.ndarray                 # covariates for every network node
    stats: CovariateStats
    tau_r: int
    core_idx: np.ndarray          # network node indices scored as core
    horizon: int

    scored_idx: np.ndarray = field(init=False)
    act_mask: np.ndarray = field(init=False)
    event_month: np.ndarray = field(init=False)
    e_counts: np.ndarray = field(init=False)      # peer-exposure months before event / T+1
    n_final: np.ndarray = field(init=False)       # infectious neighbors in the event month
    seg_months: np.ndarray = field(init=False)    # months at risk per baseline segment
    event_seg: np.ndarray = field(init=False)

    def __post_init__(self):
        tl, net = self.timeline, self.network
        node_to_tl = np.array([tl.index[i] for i in net.ids], dtype=np.int64)
        self.t_i_net = tl.t_i[node_to_tl]
        self.t_e_net = tl.t_e[node_to_tl]
        init = tl.initial_states(self.tau_r)[node_to_tl]
        self.init_states = init

        core_mask = np.zeros(net.n, dtype=bool)
        core_mask[self.core_idx] = True
        scored = np.flatnonzero(core_mask & (init == "S"))
        self.scored_idx = scored

        T = self.horizon
        te = self.t_e_net[scored]
        self.act_mask = (te >= 1) & (te <= T)
        self.event_month = np.where(self.act_mask, te, NEVER)

        e_counts = np.zeros(len(scored), dtype=np.int64)
        n_final = np.zeros(len(scored), dtype=np.int64)
        for k, i in enumerate(scored):
            nbr_ti = self.t_i_net[net.neighbors[i]]
            if self.act_mask[k]:
                m = int(te[k])
                e_counts[k] = int(np.sum(exposure_steps(nbr_ti, m, self.tau_r)))
                n_final[k] = n_infectious(nbr_ti, m, self.tau_r)
            else:
                e_counts[k] = int(np.sum(exposure_steps(nbr_ti, T + 1, self.tau_r)))
        self.e_counts = e_counts
        self.n_final = n_final

    def attach_breakpoints(self, breakpoints: np.ndarray) -> None:
        """Precompute months-at-risk per baseline segment for the scored set."""
        bp = np.atleast_1d(np.asarray(breakpoints, dtype=np.int64))
        T = self.horizon
        # window end: month before the event for activators, T for survivors
        w = np.where(self.act_mask, self.event_month - 1, T)
        seg_end = np.append(bp[1:] - 1, NEVER)
        counts = np.clip(np.minimum(seg_end[None, :], w[:, None]) - bp[None, :] + 1, 0, None)
        self.seg_months = counts.astype(np.float64)
        ev = np.where(self.act_mask, self.event_month, 1)
        self.event_seg = np.maximum(np.searchsorted(bp, ev, side="right") - 1, 0)
        self._breakpoints = bp

    def loglik(self, alpha: float, lambda0: np.ndarray, beta: np.ndarray) -> float:
        """Total log-likelihood over the scored set (may be -inf)."""
        if not hasattr(self, "seg_months"):
            raise RuntimeError("call attach_breakpoints first")
        lambda0 = np.asarray(lambda0, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        Xs = self.X[self.scored_idx]
        xb = Xs @ beta if Xs.shape[1] else np.zeros(len(self.scored_idx))
        with np.errstate(over="ignore"):
            rate = np.exp(xb)  # overflow -> inf -> -inf loglik (rejected step)
        cumlam = self.seg_months @ lambda0
        with np.errstate(divide="ignore", invalid="ignore"):
            # a zero cumulated baseline contributes nothing even when the
            # covariate rate overflows (0 * inf)
            cumhaz = np.where(cumlam > 0, cumlam * rate, 0.0)
            log1a = np.log1p(-alpha)
            peer = np.where(self.e_counts > 0, self.e_counts * log1a, 0.0)
            # log survival factor of the event month, then log(1 - survival)
            lam_ev = lambda0[self.event_seg]
            g = -np.where(lam_ev > 0, lam_ev * rate, 0.0)
            g = g + np.where(self.n_final > 0, self.n_final * log1a, 0.0)
            final = np.where(g < 0, np.log(-np.expm1(np.minimum(g, 0.0))), -np.inf)
        terms = peer - cumhaz + np.where(self.act_mask, final, 0.0)
        if np.any(np.isnan(terms)):
            bad = int(np.flatnonzero(np.isnan(terms))[0])
            raise ModelEvalError(
                f"non-finite likelihood term for household "
                f"{self.network.ids[self.scored_idx[bad]]!r}")
        return float(np.sum(terms))

    def loglik_params(self, params: EpidemicParams) -> float:
        if params.tau_r != self.tau_r:
            raise ValueError("params.tau_r does not match this model data")
        return self.loglik(params.alpha, params.lambda0, params.beta)


def build_model_data(timeline: EventTimeline, network: PeerNetwork,
                     households: Sequence[Household], covariates: Sequence[str],
                     core_ids, tau_r: int,
                     breakpoints=(1,), stats: Optional[CovariateStats] = None,
                     standardize: bool = True) -> ModelData:
    by_id = {h.id: h for h in households}
    net_households = [by_id[i] for i in network.ids]
    X, st = covariate_matrix(net_households, covariates, stats=stats, standardize=standardize)
    core_idx = np.array([network.index[i] for i in core_ids if i in network.index],
                        dtype=np.int64)
    md = ModelData(network=network, timeline=timeline, X=X, stats=st, tau_r=tau_r,
                   core_idx=np.sort(core_idx), horizon=timeline.horizon)
    md.attach_breakpoints(np.asarray(breakpoints, dtype=np.int64))
    return md


# ---------------------------------------------------------------------------
# per-household reference probabilities (month-by-month chains)

def _monthly_terms(i: int, t_last: int, data: ModelData, params: EpidemicParams):
    """log(1-mu_i^t) and n_i^t for months 1..t_last."""
    xb = float(data.X[i] @ params.beta) if data.X.shape[1] else 0.0
    with np.errstate(over="ignore"):
        rate = np.exp(xb)
    nbr_ti = data.t_i_net[data.network.neighbors[i]]
    months = np.arange(1, t_last + 1)
    log_smu = np.array([-params.lambda_at(int(t)) * rate
                        if params.lambda_at(int(t)) > 0 else 0.0 for t in months])
    n_t = np.array([n_infectious(nbr_ti, int(t), params.tau_r) for t in months])
    return log_smu, n_t


def log_activation_prob(i: int, t_i: int, data: ModelData, params: EpidemicParams) -> float:
    """log P(house i first applies exactly in month t_i), i starting S."""
    if not 1 <= t_i <= data.horizon:
        raise ValueError(f"t_i out of [1, T]: {t_i}")
    log_smu, n_t = _monthly_terms(i, t_i, data, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        log1a = np.log1p(-params.alpha)
        peer = np.where(n_t > 0, n_t * log1a, 0.0)
        surv = float(np.sum(log_smu[:-1] + peer[:-1]))
        g = log_smu[-1] + peer[-1]
        final = float(np.log(-np.expm1(min(g, 0.0)))) if g < 0 else -np.inf
    return surv + final


def activation_prob(i: int, t_i: int, data: ModelData, params: EpidemicParams) -> float:
    return float(np.exp(log_activation_prob(i, t_i, data, params)))


def log_never_activation_prob(i: int, data: ModelData, params: EpidemicParams) -> float:
    """log P(house i survives the whole window), i starting S."""
    log_smu, n_t = _monthly_terms(i, data.horizon, data, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        peer = np.where(n_t > 0, n_t * np.log1p(-params.alpha), 0.0)
    return float(np.sum(log_smu + peer))


def never_activation_prob(i: int, data: ModelData, params: EpidemicParams) -> float:
    return float(np.exp(log_never_activation_prob(i, data, params)))


def log_likelihood(data: ModelData, params: EpidemicParams) -> float:
    """Sum of log activation / never-activation terms over the scored set.

    Evaluated through the vectorized sufficient statistics; agrees with the
    per-household chain products to machine precision.
    """
    return data.loglik_params(params)


# ---------------------------------------------------------------------------
# hazard formulations

HAZARD_FORMULATIONS = ("epidemic", "additive_multiplicative", "multiplicative")


def hazard_rate(formulation: str, alpha: float, n_infected, lambda0_t, xdotb):
    """Monthly activation hazard of a susceptible house, three ways.

    epidemic:                1 - (1-alpha)^n (1-mu),  mu from the baseline map
    additive_multiplicative: 1 - (1-alpha)^n (e^{-lambda0})^{e^{x.b}}
    multiplicative:          1 - (e^{-lambda0})^{e^{x.b} e^{alpha n}}

    The first two coincide identically; the third collapses to 0 whenever
    lambda0 is 0, however strong the peer pressure.
    """
    n = np.asarray(n_infected, dtype=np.float64)
    lam = np.asarray(lambda0_t, dtype=np.float64)
    xb = np.asarray(xdotb, dtype=np.float64)
    if formulation == "epidemic":
        mu = autoinfection_prob(xb, lam)
        out = 1.0 - (1.0 - alpha) ** n * (1.0 - mu)
    elif formulation == "additive_multiplicative":
        out = 1.0 - (1.0 - alpha) ** n * np.exp(-lam) ** np.exp(xb)
    elif formulation == "multiplicative":
        out = 1.0 - np.exp(-lam) ** (np.exp(xb) * np.exp(alpha * n))
    else:
        raise ValueError(f"unknown hazard formulation {formulation!r}")
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out
