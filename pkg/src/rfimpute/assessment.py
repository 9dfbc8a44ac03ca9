"""Impact measures: statistical deviation, classification metrics and a
logistic-regression probability model.

Quantiles everywhere use linear interpolation between order statistics
(``numpy.quantile(method="linear")``); QQ probabilities are (i - 0.5)/k.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError


class SeparationWarning(UserWarning):
    """Logistic fit hit the coefficient cap (data are (quasi-)separable)."""


def _vec(x, name="sample") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise DataError(f"{name} is empty")
    return a


def mse(targets, predictions) -> float:
    t, p = _vec(targets, "targets"), _vec(predictions, "predictions")
    if t.shape != p.shape:
        raise DataError(f"length mismatch: {t.size} targets, {p.size} predictions")
    return float(np.mean((t - p) ** 2))


def quantile(x, q):
    return np.quantile(_vec(x), q, method="linear")


def correlation_pct(a, b):
    """Pearson correlation in percent, or None when either side is constant."""
    a, b = _vec(a), _vec(b)
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(100.0 * np.corrcoef(a, b)[0, 1])


def mean_mahalanobis(target, comparison):
    """Mean over records of the Mahalanobis length of (comparison_i - target_i),
    measured with the target set's covariance. Accepts 1-D columns or row
    matrices. Returns None when the target covariance is singular."""
    T = np.asarray(target, dtype=np.float64)
    P = np.asarray(comparison, dtype=np.float64)
    if T.shape != P.shape:
        raise DataError("target and comparison shapes differ")
    if T.ndim == 1:
        sd = np.std(T, ddof=1) if T.size > 1 else 0.0
        if sd == 0:
            return None
        return float(np.mean(np.abs(P - T)) / sd)
    cov = np.atleast_2d(np.cov(T, rowvar=False))
    if np.linalg.matrix_rank(cov) < cov.shape[0]:
        return None
    d = P - T
    return float(np.mean(np.sqrt(np.einsum("ij,jk,ik->i", d, np.linalg.inv(cov), d))))


def mean_mahalanobis_to_centre(target, comparison):
    """Mean distance of comparison records from the target set's centre."""
    T = _vec(target)
    P = _vec(comparison)
    sd = np.std(T, ddof=1) if T.size > 1 else 0.0
    if sd == 0:
        return None
    return float(np.mean(np.abs(P - T.mean())) / sd)


def max_percentage_deviation(target, comparison):
    """100 * max_i |P_i - T_i| / max(T_i, 1); also reports whether the
    denominator guard replaced any T_i below 1."""
    t, p = _vec(target), _vec(comparison)
    denom = np.maximum(t, 1.0)
    return float(100.0 * np.max(np.abs(p - t) / denom)), bool(np.any(t < 1.0))


@dataclass(frozen=True)
class Summary:
    mean: float
    q1: float
    median: float
    q3: float
    std: float
    variance: float

    @classmethod
    def of(cls, x) -> "Summary":
        x = _vec(x)
        q1, med, q3 = quantile(x, [0.25, 0.5, 0.75])
        var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
        return cls(float(x.mean()), float(q1), float(med), float(q3), float(np.sqrt(var)), var)


@dataclass(frozen=True)
class StatImpactReport:
    target: Summary
    comparison: Summary
    combined_mse: float                 # over every record
    imputed_mse: float | None           # over imputed records only (when known)
    mean_mahalanobis: float | None
    mean_mahalanobis_to_centre: float | None
    correlation_pct: float | None
    max_percentage_deviation: float
    deviation_guard_triggered: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> dict:
        """Row label -> value for the comparison set, as in a text report."""
        c = self.comparison
        return {
            "Mean": c.mean, "1st quartile": c.q1, "Median": c.median, "3rd quartile": c.q3,
            "Standard deviation": c.std, "Variance": c.variance,
            "Combined MSE": self.combined_mse,
            "Mean Mahalanobis distance": self.mean_mahalanobis,
            "Linear correlation (%)": self.correlation_pct,
            "Max percentage deviation (%)": self.max_percentage_deviation,
        }


def stat_impact(target_column, comparison_column, imputed_mask=None) -> StatImpactReport:
    t, p = _vec(target_column, "target"), _vec(comparison_column, "comparison")
    if t.shape != p.shape:
        raise DataError("target and comparison columns differ in length")
    imputed_mse = None
    if imputed_mask is not None:
        m = np.asarray(imputed_mask, dtype=bool).reshape(-1)
        imputed_mse = mse(t[m], p[m]) if m.any() else None
    mpd, guard = max_percentage_deviation(t, p)
    return StatImpactReport(
        target=Summary.of(t), comparison=Summary.of(p),
        combined_mse=mse(t, p), imputed_mse=imputed_mse,
        mean_mahalanobis=mean_mahalanobis(t, p),
        mean_mahalanobis_to_centre=mean_mahalanobis_to_centre(t, p),
        correlation_pct=correlation_pct(t, p),
        max_percentage_deviation=mpd, deviation_guard_triggered=guard,
    )


def ks_statistic(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov D = sup |F_a - F_b|."""
    a = np.sort(_vec(sample_a, "sample_a"))
    b = np.sort(_vec(sample_b, "sample_b"))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def qq_points(sample_a, sample_b, k: int = 100) -> np.ndarray:
    """(k, 2) matched quantiles at probabilities (i - 0.5)/k, i = 1..k."""
    if k < 2:
        raise ConfigError("qq needs k >= 2")
    p = (np.arange(1, k + 1) - 0.5) / k
    return np.column_stack([quantile(sample_a, p), quantile(sample_b, p)])


# --------------------------------------------------------------------------
# Classification

@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def negative_error(self) -> float:
        """Share of actual negatives predicted positive."""
        return self.fp / (self.tn + self.fp) if self.tn + self.fp else 0.0

    @property
    def positive_error(self) -> float:
        """Share of actual positives predicted negative."""
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(predicted, actual) -> ConfusionMatrix:
    p = np.asarray(predicted).reshape(-1)
    a = np.asarray(actual).reshape(-1)
    if p.shape != a.shape:
        raise DataError("predicted and actual label vectors differ in length")
    for name, v in (("predicted", p), ("actual", a)):
        if not np.all(np.isin(v, (0, 1))):
            raise DataError(f"{name} labels must be 0/1")
    return ConfusionMatrix(
        tn=int(np.sum((a == 0) & (p == 0))), fp=int(np.sum((a == 0) & (p == 1))),
        fn=int(np.sum((a == 1) & (p == 0))), tp=int(np.sum((a == 1) & (p == 1))),
    )


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    sensitivity: float      # TP/(TP+FN), a.k.a. recall
    specificity: float
    precision: float
    f_measure: float

    @property
    def recall(self) -> float:
        return self.sensitivity

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a, b):
    return a / b if b else 0.0


def metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    if cm.total <= 0:
        raise DataError("confusion matrix is empty")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f = _ratio(2 * precision * recall, precision + recall)
    return ClassificationMetrics(
        accuracy=(cm.tn + cm.tp) / cm.total,
        sensitivity=recall,
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        precision=precision,
        f_measure=f,
    )


# --------------------------------------------------------------------------
# Logistic regression

@dataclass(frozen=True)
class LrConfig:
    max_iter: int = 100
    tol: float = 1e-8           # gradient-norm convergence threshold
    coef_cap: float = 30.0


@dataclass(frozen=True, eq=False)
class LrModel:
    intercept: float
    coef: np.ndarray
    feature_names: tuple = ()
    n_iter: int = 0
    converged: bool = True
    separated: bool = False

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coef": self.coef.tolist(),
                "feature_names": list(self.feature_names), "n_iter": self.n_iter,
                "converged": self.converged, "separated": self.separated}

    @classmethod
    def from_dict(cls, d) -> "LrModel":
        return cls(d["intercept"], np.asarray(d["coef"], dtype=np.float64),
                   tuple(d["feature_names"]), d["n_iter"], d["converged"], d["separated"])


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return np.column_stack([np.ones(len(X)), X])


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def log_likelihood(beta, X, y) -> float:
    """Bernoulli log-likelihood; ``beta[0]`` is the intercept."""
    z = _design(X) @ beta
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(y * z - _log1pexp(z)))


def log_likelihood_gradient(beta, X, y) -> np.ndarray:
    Z = _design(X)
    return Z.T @ (np.asarray(y, dtype=np.float64) - _sigmoid(Z @ beta))


def _sigmoid(z):
    return np.exp(-_log1pexp(-z))


def fit_lr(features, labels, config: LrConfig = LrConfig(), feature_names=()) -> LrModel:
    """Maximum-likelihood fit by Newton / iteratively reweighted least squares
    with step halving."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("labels must be binary")
    if len(y) != len(X):
        raise DataError("features and labels differ in length")
    if len(y) <= X.shape[1]:
        raise DataError("need more rows than features")
    Z = _design(X)
    beta = np.zeros(Z.shape[1])
    ll = log_likelihood(beta, X, y)
    converged = separated = False
    it = 0
    for it in range(1, config.max_iter + 1):
        p = _sigmoid(Z @ beta)
        grad = Z.T @ (y - p)
        if np.linalg.norm(grad) < config.tol:
            converged = True
            break
        w = p * (1 - p)
        H = Z.T @ (Z * w[:, None]) + 1e-12 * np.eye(Z.shape[1])
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            new_ll = log_likelihood(cand, X, y)
            # slack absorbs rounding in the likelihood near the optimum
            if new_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, new_ll
        if np.max(np.abs(beta)) > config.coef_cap:
            separated = True
            beta = np.clip(beta, -config.coef_cap, config.coef_cap)
            warnings.warn("logistic fit reached the coefficient cap; data look separable",
                          SeparationWarning, stacklevel=2)
            break
    else:
        p = _sigmoid(Z @ beta)
        converged = np.linalg.norm(Z.T @ (y - p)) < config.tol
    return LrModel(float(beta[0]), beta[1:].copy(), tuple(feature_names), it, bool(converged), separated)


def lr_predict_proba(model: LrModel, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X
    if X.shape[1] != model.coef.size:
        raise DataError(f"expected {model.coef.size} features, got {X.shape[1]}")
    p = _sigmoid(model.intercept + X @ model.coef)
    return p[0] if single else p


@dataclass(frozen=True)
class LrImpactReport:
    target: Summary                 # probabilities in percent
    comparison: Summary
    correlation_pct: float | None
    ks: float
    mse: float                      # between percentage probability vectors

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> dict:
        c = self.comparison
        return {
            "1st quartile": c.q1, "Median": c.median, "3rd quartile": c.q3, "Mean": c.mean,
            "Variance": c.variance, "Linear correlation (%)": self.correlation_pct,
            "KS statistic": self.ks, "Mean squared error": self.mse,
        }


def lr_impact(model: LrModel, target_set, imputed_set) -> LrImpactReport:
    """Compare the model's HIV-positive probabilities (in %) on the target rows
    against the same rows with imputed values."""
    T = np.asarray(target_set, dtype=np.float64)
    P = np.asarray(imputed_set, dtype=np.float64)
    if T.shape[0] != P.shape[0]:
        raise DataError(f"row-count mismatch: {T.shape[0]} vs {P.shape[0]}")
    pt = 100.0 * lr_predict_proba(model, T)
    pp = 100.0 * lr_predict_proba(model, P)
    return LrImpactReport(Summary.of(pt), Summary.of(pp), correlation_pct(pt, pp),
                          ks_statistic(pt, pp), mse(pt, pp))


# --------------------------------------------------------------------------
# Text rendering

def format_table(columns: dict, row_labels: list, title: str = "") -> str:
    """Aligned text table: ``columns`` maps header -> list of cells."""
    headers = [""] + list(columns)
    body = []
    for i, label in enumerate(row_labels):
        row = [label]
        for col in columns.values():
            v = col[i]
            if v is None:
                row.append("-")
            elif isinstance(v, float):
                row.append(f"{v:.4g}" if abs(v) < 1e4 else f"{v:.1f}")
            else:
                row.append(str(v))
        body.append(row)
    widths = [max(len(str(r[c])) for r in [headers] + body) for c in range(len(headers))]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in body)
    return "\n".join(lines) + "\n"
