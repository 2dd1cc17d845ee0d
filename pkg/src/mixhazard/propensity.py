"""Notice-length propensity scores, inverse-probability weights and balance."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from mixhazard.core import SpellData, as_spell_data


class SeparationError(ArithmeticError):
    """Fitted probabilities collapsed to 0 or 1 (perfect prediction)."""


@dataclass(frozen=True)
class CovariateSpec:
    """Which covariates enter the score model.

    ``numeric`` columns enter linearly; ``categorical`` columns are one-hot
    encoded with the first (sorted) level as reference.  An intercept is
    always included.
    """

    numeric: tuple = ()
    categorical: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "numeric", tuple(self.numeric))
        object.__setattr__(self, "categorical", tuple(self.categorical))

    def levels(self, data: SpellData) -> dict:
        return {c: tuple(np.unique(data.covariate(c)).tolist()) for c in self.categorical}

    def design(self, data: SpellData, levels: dict) -> tuple[np.ndarray, list[str]]:
        n = len(data)
        cols = [np.ones(n)]
        names = ["intercept"]
        for c in self.numeric:
            cols.append(data.covariate(c))
            names.append(c)
        for c in self.categorical:
            x = data.covariate(c)
            unseen = set(np.unique(x).tolist()) - set(levels[c])
            if unseen:
                raise ValueError(f"categorical covariate {c!r} has levels not seen in fitting: {sorted(unseen)}")
            for lev in levels[c][1:]:
                cols.append((x == lev).astype(float))
                names.append(f"{c}[{lev:g}]")
        return np.column_stack(cols), names


@dataclass
class PropensityModel:
    link: str
    coefficients: np.ndarray  # (J-1, p), reference category has zeros
    column_names: list
    notice_labels: tuple
    spec: CovariateSpec
    levels: dict
    kept_columns: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    loglik: float

    @property
    def reference(self) -> str:
        return self.notice_labels[0]

    def design(self, data: SpellData) -> np.ndarray:
        X, _ = self.spec.design(data, self.levels)
        return X[:, self.kept_columns]

    def predict_proba(self, records) -> np.ndarray:
        data = as_spell_data(records)
        return _probabilities(self.design(data), self.coefficients)

    def own_scores(self, records) -> np.ndarray:
        data = as_spell_data(records)
        return self.predict_proba(data)[np.arange(len(data)), data.notice]

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "reference": self.reference,
            "columns": list(self.column_names),
            "coefficients": {
                lab: dict(zip(self.column_names, map(float, row)))
                for lab, row in zip(self.notice_labels[1:], self.coefficients)
            },
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "loglik": self.loglik,
        }


def _probabilities(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    eta = np.column_stack([np.zeros(X.shape[0]), X @ B.T])
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def _loglik(X, Y, B):
    eta = np.column_stack([np.zeros(X.shape[0]), X @ B.T])
    return float(np.sum(eta[Y.astype(bool)]) - np.sum(logsumexp(eta, axis=1)))


def _independent_columns(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    for j in range(X.shape[1]):
        trial = X[:, keep + [j]]
        s = np.linalg.svd(trial / np.maximum(np.linalg.norm(trial, axis=0), 1e-300), compute_uv=False)
        if s[-1] > tol * s[0]:
            keep.append(j)
    return np.array(keep, dtype=int)


def fit_propensity(records, spec: CovariateSpec | None = None, link: str = "auto",
                   max_iter: int = 100, tol: float = 1e-8) -> PropensityModel:
    """Maximum-likelihood (multinomial) logit for notice category given covariates.

    Newton iterations with step halving; converged once the max-norm of the
    average score is below ``tol`` and the
    Newton step is below 1e-6.  Raises :class:`SeparationError` when a
    fitted probability lands within 1e-10 of 0 or 1.
    """
    data = as_spell_data(records)
    spec = spec or CovariateSpec()
    J = data.n_notices
    present = np.unique(data.notice)
    if present.size < 2:
        raise ValueError("need at least two notice categories")
    if present.size < J:
        raise ValueError(f"notice categories without records: {[data.notice_labels[l] for l in set(range(J)) - set(present)]}")
    if link == "auto":
        link = "binary-logit" if J == 2 else "multinomial-logit"
    if link == "binary-logit" and J != 2:
        raise ValueError("binary-logit needs exactly two notice categories")
    if link not in ("binary-logit", "multinomial-logit"):
        raise ValueError(f"unknown link {link!r}")

    levels = spec.levels(data)
    Xfull, names = spec.design(data, levels)
    kept = _independent_columns(Xfull)
    if kept.size < Xfull.shape[1]:
        dropped = [names[j] for j in range(len(names)) if j not in set(kept)]
        warnings.warn(f"dropping collinear propensity columns: {dropped}", RuntimeWarning)
    X = Xfull[:, kept]
    names = [names[j] for j in kept]
    n, p = X.shape
    Y = np.zeros((n, J))
    Y[np.arange(n), data.notice] = 1.0

    B = np.zeros((J - 1, p))
    ll = _loglik(X, Y, B)
    grad_norm = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        P = _probabilities(X, B)
        G = (X.T @ (Y[:, 1:] - P[:, 1:])).T  # (J-1, p)
        grad_norm = float(np.max(np.abs(G)) / n)
        H = np.zeros(((J - 1) * p, (J - 1) * p))
        for a in range(J - 1):
            for b in range(a, J - 1):
                w = P[:, a + 1] * ((a == b) - P[:, b + 1])
                block = (X * w[:, None]).T @ X
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = block
                H[b * p:(b + 1) * p, a * p:(a + 1) * p] = block
        try:
            step = np.linalg.solve(H, G.ravel()).reshape(J - 1, p)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, G.ravel(), rcond=None)[0].reshape(J - 1, p)
        # a small score alone is not enough: under separation the score vanishes
        # while the coefficients keep drifting by O(1) per step
        if grad_norm < tol and np.max(np.abs(step)) < 1e-6:
            converged = True
            break
        t = 1.0
        while True:
            cand = B + t * step
            ll_new = _loglik(X, Y, cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t /= 2
        B, ll = cand, ll_new

    P = _probabilities(X, B)
    if np.any(P < 1e-10) or np.any(P > 1 - 1e-10):
        raise SeparationError("fitted notice probabilities collapse to 0 or 1; covariates perfectly predict notice")
    if not converged:
        warnings.warn(f"propensity fit did not converge in {max_iter} iterations (grad {grad_norm:.2e})", RuntimeWarning)
    return PropensityModel(
        link=link, coefficients=B, column_names=names, notice_labels=data.notice_labels, spec=spec,
        levels=levels, kept_columns=kept, iterations=it, grad_norm=grad_norm, converged=converged, loglik=ll,
    )


def ipw_weights(model: PropensityModel, records, stabilized: bool = False) -> np.ndarray:
    """``1 / p_hat_L(X)`` for each record's own notice.

    ``stabilized`` multiplies by the sample share of the notice; it is meant
    for diagnostics only, estimation uses the plain weights.
    """
    data = as_spell_data(records)
    own = model.own_scores(data)
    if np.any(own <= 0) or np.any(own >= 1):
        raise ValueError("propensity scores outside (0, 1)")
    w = 1.0 / own
    if stabilized:
        share = np.bincount(data.notice, minlength=data.n_notices) / len(data)
        w = w * share[data.notice]
    return w


def trim_by_score(records, model, lo: float = 0.1, hi: float = 0.9):
    """Drop records whose own-notice score lies outside ``[lo, hi]``.

    ``model`` is a :class:`PropensityModel` or an array of own-notice scores.
    Returns ``(kept_data, n_dropped)``.
    """
    if not 0 < lo < hi < 1:
        raise ValueError("need 0 < lo < hi < 1")
    data = as_spell_data(records)
    own = model.own_scores(data) if isinstance(model, PropensityModel) else np.asarray(model, dtype=float)
    keep = (own >= lo) & (own <= hi)
    if not keep.any():
        raise ValueError("score trimming removed every record")
    return data.subset(keep), int((~keep).sum())


@dataclass
class BalanceReport:
    rows: list = field(default_factory=list)
    overlap: dict = field(default_factory=dict)

    def max_abs_normalized_diff(self, weighted: bool = True) -> float:
        key = "norm_diff_weighted" if weighted else "norm_diff_unweighted"
        return max(abs(r[key]) for r in self.rows) if self.rows else 0.0

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"rows": self.rows, "overlap": self.overlap}, fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        if not self.rows:
            open(path, "w").close()
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            w.writeheader()
            w.writerows(self.rows)


def _wmean_var(x, w):
    m = np.average(x, weights=w)
    return m, np.average((x - m) ** 2, weights=w)


def balance_report(records, weights, scores: np.ndarray | None = None) -> BalanceReport:
    """Group means of each covariate with and without weights.

    Every non-reference notice is compared with the reference (first)
    notice; the normalized difference divides by ``sqrt((v1 + v2) / 2)``.
    ``scores`` (``n x J`` fitted probabilities) adds an overlap summary.
    """
    data = as_spell_data(records)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    report = BalanceReport()
    ref = data.notice == 0
    for k, name in enumerate(data.covariate_names):
        x = data.covariates[:, k]
        for l in range(1, data.n_notices):
            grp = data.notice == l
            row = {"covariate": name, "reference": data.notice_labels[0], "group": data.notice_labels[l]}
            for tag, ww in (("unweighted", np.ones_like(w)), ("weighted", w)):
                m0, v0 = _wmean_var(x[ref], ww[ref])
                m1, v1 = _wmean_var(x[grp], ww[grp])
                diff = m1 - m0
                scale = np.sqrt((v0 + v1) / 2)
                row[f"mean_ref_{tag}"] = float(m0)
                row[f"mean_group_{tag}"] = float(m1)
                row[f"diff_{tag}"] = float(diff)
                row[f"norm_diff_{tag}"] = float(diff / scale) if scale > 0 else 0.0
            report.rows.append(row)
    if scores is not None:
        qs = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0]
        for l, lab in enumerate(data.notice_labels):
            grp = data.notice == l
            report.overlap[lab] = {
                data.notice_labels[c]: [float(v) for v in np.quantile(scores[grp, c], qs)]
                for c in range(data.n_notices)
            }
    return report
