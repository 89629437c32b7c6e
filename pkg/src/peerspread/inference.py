"""Maximum-likelihood fitting of the adoption model and AIC model choice.

The likelihood is maximized with L-BFGS-B inside the box 0 <= alpha <= 1,
baseline segments positive (optimized in log space), covariate loadings
free. Standard errors come from the numerically differentiated Hessian via
the Fisher-information relation; AIC = 2k - 2*loglik decides between the
peer-effect model and the endemic-only nested alternative.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.optimize
from scipy.stats import norm

from ._common import NEVER, tau_r_label
from .epimodel import CovariateStats, EpidemicParams, ModelData, build_model_data

_REJECTED = 1e18  # objective value reported for non-finite likelihoods

# Wald significance ladder used in the comparison reports (the glm module
# uses the shorter ladder without the 0.1 rung).
STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


def wald_stars(z: float, levels=STAR_LEVELS) -> str:
    if not np.isfinite(z):
        return ""
    p = 2.0 * norm.sf(abs(z))
    for cutoff, glyph in levels:
        if p < cutoff:
            return glyph
    return ""


def aic(loglik: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return 2.0 * k - 2.0 * loglik


# ---------------------------------------------------------------------------
# finite differences

def _steps(theta: np.ndarray, step: float, scales) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if scales is None:
        scales = np.ones_like(theta)
    return step * np.maximum(np.abs(theta), np.asarray(scales, dtype=np.float64))


def _d1_stencil(x: float, h: float, lo: float, hi: float) -> list[tuple[float, float]]:
    """First-derivative stencil as (offset, weight); one-sided at bounds."""
    if x + h <= hi and x - h >= lo:
        return [(h, 0.5 / h), (-h, -0.5 / h)]
    if x + h > hi:  # backward, 2nd order
        return [(0.0, 1.5 / h), (-h, -2.0 / h), (-2 * h, 0.5 / h)]
    return [(0.0, -1.5 / h), (h, 2.0 / h), (2 * h, -0.5 / h)]


def numerical_gradient(f: Callable, theta, step: float = 1e-5,
                       bounds: Optional[Sequence] = None, scales=None) -> np.ndarray:
    """Central-difference gradient, one-sided within a step of a box bound."""
    theta = np.asarray(theta, dtype=np.float64)
    hs = _steps(theta, step, scales)
    grad = np.zeros_like(theta)
    for j in range(len(theta)):
        lo, hi = bounds[j] if bounds is not None else (-math.inf, math.inf)
        lo = -math.inf if lo is None else lo
        hi = math.inf if hi is None else hi
        for off, w in _d1_stencil(theta[j], hs[j], lo, hi):
            tj = theta.copy()
            tj[j] += off
            grad[j] += w * f(tj)
    return grad


def numerical_hessian(f: Callable, theta, step: float = 5e-3,
                      bounds: Optional[Sequence] = None, scales=None) -> np.ndarray:
    """Finite-difference Hessian, symmetrized as (H + H^T)/2.

    Each entry composes two first-derivative stencils, so coordinates near
    a bound automatically switch to one-sided differences.
    """
    theta = np.asarray(theta, dtype=np.float64)
    p = len(theta)
    hs = _steps(theta, step, scales)
    stencils = []
    for j in range(p):
        lo, hi = bounds[j] if bounds is not None else (-math.inf, math.inf)
        lo = -math.inf if lo is None else lo
        hi = math.inf if hi is None else hi
        stencils.append(_d1_stencil(theta[j], hs[j], lo, hi))

    cache: dict[tuple, float] = {}

    def feval(offsets: tuple) -> float:
        if offsets not in cache:
            t = theta.copy()
            for j, off in offsets:
                t[j] += off
            cache[offsets] = f(t)
        return cache[offsets]

    H = np.zeros((p, p))
    for j in range(p):
        for k in range(j, p):
            val = 0.0
            for off_j, w_j in stencils[j]:
                for off_k, w_k in stencils[k]:
                    key = ((j, off_j), (k, off_k)) if j != k else ((j, off_j + off_k),)
                    val += w_j * w_k * feval(key)
            H[j, k] = H[k, j] = val
    return 0.5 * (H + H.T)


def standard_errors(hessian: np.ndarray) -> tuple[np.ndarray, bool]:
    """SEs as sqrt(diag((-H)^-1)); (nan, False) when -H is not positive
    definite — never fabricated."""
    H = np.asarray(hessian, dtype=np.float64)
    nan = np.full(H.shape[0], np.nan)
    if not np.all(np.isfinite(H)):
        return nan, False
    info = -H
    try:
        eig = np.linalg.eigvalsh(info)
    except np.linalg.LinAlgError:
        return nan, False
    if np.min(eig) <= 0:
        return nan, False
    cov = np.linalg.inv(info)
    diag = np.diag(cov)
    if np.any(diag <= 0):
        return nan, False
    return np.sqrt(diag), True


# ---------------------------------------------------------------------------
# fit configuration / result

@dataclass
class FitConfig:
    """Everything that pins a fit besides the data itself."""

    covariates: list[str] = field(default_factory=list)
    breakpoints: list[int] = field(default_factory=lambda: [1])
    tau_r: int = 12
    fix_alpha: bool = False            # endemic-only mode (alpha removed)
    alpha0: float = 1e-4
    lambda0_init: Optional[np.ndarray] = None  # default: empirical monthly rate
    beta0: Optional[np.ndarray] = None
    alpha_bounds: tuple[float, float] = (0.0, 1.0)
    log_lambda_bounds: tuple[float, float] = (-30.0, 2.3)
    gtol: float = 1e-6
    ftol: float = 1e-11
    max_iter: int = 500
    fd_step: float = 1e-5
    hess_step: float = 5e-3
    restarts: int = 3
    restart_seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.gtol <= 0 or self.ftol <= 0 or self.fd_step <= 0 or self.hess_step <= 0:
            raise ValueError("tolerances and steps must be positive")
        if self.alpha_bounds[0] < 0 or self.alpha_bounds[1] > 1 \
                or self.alpha_bounds[0] >= self.alpha_bounds[1]:
            raise ValueError("alpha bounds must be well-ordered within [0,1]")
        if self.breakpoints[0] != 1 or any(b2 <= b1 for b1, b2 in
                                           zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must start at 1 and increase")


@dataclass
class FitResult:
    """MLE output plus everything needed to reproduce or reuse it."""

    model: str                      # "epidemic" | "endemic"
    alpha: Optional[float]
    se_alpha: Optional[float]
    lambda0: np.ndarray
    se_lambda0: np.ndarray
    beta: np.ndarray
    se_beta: np.ndarray
    loglik: float
    k: int
    aic: float
    converged: bool
    boundary: list[str]
    se_available: bool
    stats: CovariateStats
    fingerprint: dict
    trace: dict

    def params(self) -> EpidemicParams:
        return EpidemicParams(
            alpha=self.alpha if self.alpha is not None else 0.0,
            beta=self.beta, lambda0=self.lambda0,
            breakpoints=np.asarray(self.fingerprint["breakpoints"], dtype=np.int64),
            tau_r=self.fingerprint["tau_r"],
        )

    def fingerprint_key(self) -> str:
        fp = self.fingerprint
        return "|".join(str(fp.get(k, "")) for k in
                        ("neighborhood", "metric", "tau_d", "tau_r", "data_hash"))


def data_fingerprint(data: ModelData) -> str:
    """Hash of the scored data: ids, events, horizon, edges, core set."""
    h = hashlib.sha256()
    h.update(",".join(data.network.ids).encode())
    h.update(data.t_e_net.tobytes())
    h.update(data.t_i_net.tobytes())
    h.update(np.asarray(sorted(data.core_idx)).tobytes())
    h.update(str(data.horizon).encode())
    for i, j in sorted(data.network.edge_set()):
        h.update(f"{i}-{j};".encode())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# the fit itself

def _pack_bounds(cfg: FitConfig, n_seg: int, n_beta: int, with_alpha: bool):
    bounds = []
    if with_alpha:
        bounds.append(cfg.alpha_bounds)
    bounds.extend([cfg.log_lambda_bounds] * n_seg)
    bounds.extend([(None, None)] * n_beta)
    return bounds


def _objective(data: ModelData, with_alpha: bool, n_seg: int):
    def f(theta: np.ndarray) -> float:
        pos = 0
        if with_alpha:
            alpha = float(np.clip(theta[0], 0.0, 1.0))
            pos = 1
        else:
            alpha = 0.0
        lam = np.exp(theta[pos:pos + n_seg])
        beta = theta[pos + n_seg:]
        ll = data.loglik(alpha, lam, beta)
        return -ll if np.isfinite(ll) else _REJECTED
    return f


def fit_model_data(data: ModelData, config: FitConfig,
                   fingerprint_extra: Optional[dict] = None) -> FitResult:
    """Maximize the log-likelihood on prebuilt :class:`ModelData`.

    The epidemic fit also solves the nested endemic problem first and adds
    its optimum (with alpha at 0) as a restart, so the epidemic optimum can
    never fall below the endemic one.
    """
    n_seg = len(config.breakpoints)
    n_beta = data.X.shape[1]
    with_alpha = not config.fix_alpha
    data.attach_breakpoints(np.asarray(config.breakpoints, dtype=np.int64))

    n_scored = len(data.scored_idx)
    if n_scored == 0:
        raise ValueError("no scored households (core set empty or none start susceptible)")
    n_act = int(np.sum(data.act_mask))
    emp_rate = max(n_act / (n_scored * data.horizon), 1e-8)

    lam0 = np.full(n_seg, emp_rate) if config.lambda0_init is None \
        else np.asarray(config.lambda0_init, dtype=np.float64)
    beta0 = np.zeros(n_beta) if config.beta0 is None \
        else np.asarray(config.beta0, dtype=np.float64)
    loglam0 = np.clip(np.log(np.maximum(lam0, 1e-300)), *config.log_lambda_bounds)

    starts = []
    base = ([config.alpha0] if with_alpha else []) + list(loglam0) + list(beta0)
    starts.append(np.asarray(base, dtype=np.float64))
    rng = np.random.default_rng(config.restart_seed)
    for _ in range(max(config.restarts - 1, 0)):
        jitter = starts[0].copy()
        pos = 0
        if with_alpha:
            jitter[0] = float(np.clip(config.alpha0 * rng.uniform(0.3, 3.0),
                                      *config.alpha_bounds))
            pos = 1
        jitter[pos:pos + n_seg] += rng.normal(0.0, 0.5, size=n_seg)
        jitter[pos:pos + n_seg] = np.clip(jitter[pos:pos + n_seg], *config.log_lambda_bounds)
        jitter[pos + n_seg:] += rng.normal(0.0, 0.2, size=n_beta)
        starts.append(jitter)

    endemic_sub = None
    if with_alpha:
        endemic_sub = fit_model_data(data, replace(config, fix_alpha=True),
                                     fingerprint_extra)
        nested = np.concatenate(([0.0],
                                 np.clip(np.log(np.maximum(endemic_sub.lambda0, 1e-300)),
                                         *config.log_lambda_bounds),
                                 endemic_sub.beta))
        starts.append(nested)

    f = _objective(data, with_alpha, n_seg)
    bounds = _pack_bounds(config, n_seg, n_beta, with_alpha)
    jac = lambda th: numerical_gradient(f, th, step=config.fd_step, bounds=bounds)

    best = None
    n_fev = 0
    for s, x0 in enumerate(starts):
        if not np.isfinite(f(x0)) or f(x0) >= _REJECTED:
            continue
        res = scipy.optimize.minimize(
            f, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": config.max_iter, "ftol": config.ftol,
                     "gtol": config.gtol})
        n_fev += res.nfev
        if best is None or res.fun < best[0].fun - 1e-12:
            best = (res, s)
    if best is None:
        raise ValueError("non-finite likelihood at every starting point")
    res, best_start = best

    pos = 0
    if with_alpha:
        alpha_hat = float(np.clip(res.x[0], 0.0, 1.0))
        pos = 1
    else:
        alpha_hat = None
    lam_hat = np.exp(res.x[pos:pos + n_seg])
    beta_hat = np.asarray(res.x[pos + n_seg:], dtype=np.float64)
    ll_hat = data.loglik(alpha_hat or 0.0, lam_hat, beta_hat)

    boundary = []
    if with_alpha:
        if alpha_hat <= config.alpha_bounds[0] + 1e-12:
            boundary.append("alpha")
        elif alpha_hat >= config.alpha_bounds[1] - 1e-12:
            boundary.append("alpha")
    for s in range(n_seg):
        if res.x[pos + s] <= config.log_lambda_bounds[0] + 1e-6:
            boundary.append(f"lambda0[{s}]")

    # Hessian in natural parameter space (alpha, lambda0, beta) with
    # one-sided stencils at the box edges.
    def f_nat(phi: np.ndarray) -> float:
        q = 0
        a = 0.0
        if with_alpha:
            a = float(np.clip(phi[0], 0.0, 1.0))
            q = 1
        ll = data.loglik(a, np.maximum(phi[q:q + n_seg], 0.0), phi[q + n_seg:])
        return ll if np.isfinite(ll) else -_REJECTED

    phi_hat = (([alpha_hat] if with_alpha else []) + list(lam_hat) + list(beta_hat))
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    nat_bounds = ([(0.0, 1.0)] if with_alpha else []) \
        + [(0.0, None)] * n_seg + [(None, None)] * n_beta
    nat_scales = (([1e-3] if with_alpha else [])
                  + [max(l, 1e-5) for l in lam_hat] + [1.0] * n_beta)
    H = numerical_hessian(f_nat, phi_hat, step=config.hess_step,
                          bounds=nat_bounds, scales=nat_scales)
    se, se_ok = standard_errors(H)

    q = 1 if with_alpha else 0
    k = len(phi_hat)
    fp = {
        "tau_r": config.tau_r,
        "covariates": list(config.covariates) if config.covariates
        else list(data.stats.names),
        "breakpoints": list(config.breakpoints),
        "standardization": data.stats.to_dict(),
        "data_hash": data_fingerprint(data),
        "metric": data.network.metric,
        "tau_d": data.network.tau_d,
        "neighborhood": "",
    }
    if fingerprint_extra:
        fp.update(fingerprint_extra)

    return FitResult(
        model="epidemic" if with_alpha else "endemic",
        alpha=alpha_hat,
        se_alpha=float(se[0]) if (with_alpha and se_ok) else (np.nan if with_alpha else None),
        lambda0=lam_hat,
        se_lambda0=se[q:q + n_seg],
        beta=beta_hat,
        se_beta=se[q + n_seg:],
        loglik=float(ll_hat),
        k=k,
        aic=aic(float(ll_hat), k),
        converged=bool(res.success),
        boundary=boundary,
        se_available=se_ok,
        stats=data.stats,
        fingerprint=fp,
        trace={"n_fev": int(n_fev), "n_iter": int(res.nit),
               "n_starts": len(starts), "best_start": int(best_start),
               "endemic_presolve": endemic_sub.loglik if endemic_sub else None},
    )


def fit_mle(timeline, network, households, core_ids, config: FitConfig,
            fingerprint_extra: Optional[dict] = None,
            stats: Optional[CovariateStats] = None) -> FitResult:
    """Build the model data for (timeline, network, covariates) and fit."""
    data = build_model_data(timeline, network, households, config.covariates,
                            core_ids, config.tau_r,
                            breakpoints=config.breakpoints, stats=stats,
                            standardize=config.standardize)
    return fit_model_data(data, config, fingerprint_extra)


# ---------------------------------------------------------------------------
# model comparison

@dataclass
class ComparisonRow:
    fit: FitResult
    rank: int
    stars: str


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    verdict: str              # "peer effect" | "no peer effect"

    def best(self) -> FitResult:
        return self.rows[0].fit


def compare_models(fits: Sequence[FitResult]) -> ComparisonReport:
    """AIC-ascending ranking with the two-step peer-effect decision.

    Verdict is "peer effect" iff the AIC-best model carries alpha > 0 and
    beats the endemic-only fit strictly. All fits must come from the same
    timeline/covariate configuration.
    """
    fits = list(fits)
    if not fits:
        raise ValueError("no fits to compare")
    ref = fits[0].fingerprint
    for other in fits[1:]:
        for key in ("data_hash", "covariates", "breakpoints", "neighborhood"):
            if other.fingerprint.get(key) != ref.get(key):
                raise ValueError(f"mixed fingerprints: {key} differs across fits")
    endemic = [ft for ft in fits if ft.model == "endemic"]
    if not endemic:
        raise ValueError("comparison requires the endemic-only fit")
    endemic_aic = min(ft.aic for ft in endemic)

    ranked = sorted(fits, key=lambda ft: (ft.aic, ft.fingerprint_key()))
    rows = []
    for rank, ft in enumerate(ranked, start=1):
        stars = ""
        if ft.model == "epidemic" and ft.alpha is not None and ft.se_alpha \
                and np.isfinite(ft.se_alpha) and ft.se_alpha > 0:
            stars = wald_stars(ft.alpha / ft.se_alpha)
        rows.append(ComparisonRow(fit=ft, rank=rank, stars=stars))
    best = ranked[0]
    peer = (best.model == "epidemic" and best.alpha is not None
            and best.alpha > 0 and best.aic < endemic_aic)
    return ComparisonReport(rows=rows, verdict="peer effect" if peer else "no peer effect")


def fit_report_rows(report: ComparisonReport, neighborhood: str = "") -> list[list]:
    """Rows in the fit-report CSV shape (one per model, AIC-ascending)."""
    out = []
    for row in report.rows:
        ft = row.fit
        is_epi = ft.model == "epidemic"
        out.append([
            neighborhood or ft.fingerprint.get("neighborhood", ""),
            ft.fingerprint.get("metric", "") if is_epi else "no_peer",
            ft.fingerprint.get("tau_d", "") if is_epi else "",
            tau_r_label(ft.fingerprint["tau_r"]) if is_epi else "",
            ft.alpha if is_epi else "",
            ft.se_alpha if is_epi else "",
            ft.loglik, ft.k, ft.aic, ft.converged, report.verdict,
        ])
    return out


FIT_REPORT_HEADER = ["neighborhood", "metric", "tau_d", "tau_R", "alpha",
                     "se_alpha", "loglik", "k", "aic", "converged", "verdict"]
