"""Baseline logistic regression of eventual participation on covariates.

Fitted by iteratively reweighted least squares with SEs from the inverse
observed information and McFadden's pseudo-R^2; a tiny ridge (1e-8) keeps
the IRLS solve conditioned and is disclosed in the fit record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from ._common import write_csv

RIDGE = 1e-8
GLM_STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


class SeparationError(RuntimeError):
    """Perfect separation: coefficients diverge, no finite MLE exists."""


class RankDeficientError(ValueError):
    """Feature matrix is (numerically) rank deficient."""


@dataclass
class LogitFit:
    """Coefficients (intercept first), SEs, and fit diagnostics."""

    terms: list[str]
    coef: np.ndarray
    se: np.ndarray
    loglik: float
    loglik_null: float
    pseudo_r2: float          # McFadden: 1 - loglik/loglik_null
    n: int
    converged: bool
    center: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    ridge: float = RIDGE

    def linear_predictor(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != len(self.coef) - 1:
            raise ValueError(
                f"expected {len(self.coef) - 1} features, got {features.shape[1]}")
        z = (features - self.center) / self.scale if self.center.size else features
        return self.coef[0] + z @ self.coef[1:]

    def stars(self) -> list[str]:
        out = []
        for c, s in zip(self.coef, self.se):
            if not np.isfinite(s) or s <= 0:
                out.append("")
                continue
            p = 2.0 * norm.sf(abs(c / s))
            out.append(next((g for cut, g in GLM_STAR_LEVELS if p < cut), ""))
        return out

    def write_csv(self, path) -> None:
        """Coefficient table: term,estimate,se,stars plus N / pseudo-R^2."""
        rows = [[t, c, s, g] for t, c, s, g in
                zip(self.terms, self.coef, self.se, self.stars())]
        rows.append(["N", self.n, "", ""])
        rows.append(["pseudo_R2_mcfadden", self.pseudo_r2, "", ""])
        write_csv(path, ["term", "estimate", "se", "stars"], rows)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bernoulli_loglik(y: np.ndarray, eta: np.ndarray) -> float:
    # log(sigmoid) computed stably on both tails
    return float(np.sum(np.where(y == 1, -np.logaddexp(0.0, -eta),
                                 -np.logaddexp(0.0, eta))))


def fit_logistic(features: np.ndarray, labels: np.ndarray,
                 terms: Optional[Sequence[str]] = None,
                 center=None, scale=None,
                 tol: float = 1e-8, max_iter: int = 100) -> LogitFit:
    """IRLS fit of log-odds(y) = b0 + x . b.

    ``features`` columns are used as given; pass ``center``/``scale`` to
    record a standardization already applied (reused by prediction).
    Raises :class:`SeparationError` when the coefficients diverge and
    :class:`RankDeficientError` for duplicated/collinear columns.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    n, p = X.shape
    if n != len(y):
        raise ValueError("features and labels disagree on N")
    if n <= p + 1:
        raise ValueError("need more observations than coefficients")
    Xd = np.column_stack([np.ones(n), X])

    # design rank check up front: near-duplicate columns are an error,
    # never a silently unstable solve
    sv = np.linalg.svd(Xd, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise RankDeficientError("design matrix is rank deficient")

    beta = np.zeros(p + 1)
    rate = float(np.mean(y))
    if not 0.0 < rate < 1.0:
        raise ValueError("labels are all 0 or all 1")
    beta[0] = np.log(rate / (1.0 - rate))
    ll_null = float(n * (rate * np.log(rate) + (1 - rate) * np.log(1 - rate)))

    converged = False
    ll = -np.inf
    for _ in range(max_iter):
        eta = Xd @ beta
        if np.max(np.abs(eta)) > 30.0 and np.linalg.norm(beta[1:]) > 20.0:
            raise SeparationError(
                "perfect separation detected (diverging coefficients)")
        mu = _sigmoid(eta)
        w = mu * (1.0 - mu)
        grad = Xd.T @ (y - mu)
        H = Xd.T @ (w[:, None] * Xd) + RIDGE * np.eye(p + 1)
        step = np.linalg.solve(H, grad)
        beta = beta + step
        ll_new = _bernoulli_loglik(y, Xd @ beta)
        if np.max(np.abs(grad)) < tol * n or abs(ll_new - ll) < tol:
            ll = ll_new
            converged = True
            break
        ll = ll_new
    if not converged:
        eta = Xd @ beta
        if np.max(np.abs(eta)) > 30.0:
            raise SeparationError("perfect separation detected (no finite optimum)")

    eta = Xd @ beta
    mu = _sigmoid(eta)
    w = mu * (1.0 - mu)
    info = Xd.T @ (w[:, None] * Xd)
    cov = np.linalg.inv(info + RIDGE * np.eye(p + 1))
    se = np.sqrt(np.diag(cov))
    names = ["intercept"] + (list(terms) if terms is not None
                             else [f"x{j}" for j in range(1, p + 1)])
    return LogitFit(
        terms=names, coef=beta, se=se, loglik=float(ll), loglik_null=ll_null,
        pseudo_r2=float(1.0 - ll / ll_null), n=n, converged=converged,
        center=np.zeros(p) if center is None else np.asarray(center, dtype=np.float64),
        scale=np.ones(p) if scale is None else np.asarray(scale, dtype=np.float64),
    )


def predict_prob(fit: LogitFit, features) -> np.ndarray | float:
    """Participation probability for raw feature vectors (standardization,
    if any, is applied from the fit record)."""
    eta = fit.linear_predictor(features)
    out = _sigmoid(eta)
    return float(out[0]) if out.shape == (1,) else out
