"""Identification and GMM estimation of the Mixed Hazard model.

Moments are stacked notice-major: element ``l * Dbar + (d - 1)`` is the
moment for notice ``l`` at duration ``d``.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from mixhazard.core import (
    DegenerateSurvivalError,
    DurationRecord,
    ExitRateTable,
    InadmissibleWarning,
    LogLogistic,
    ModelParams,
    as_spell_data,
    average_type_paths,
    empirical_exit_rates,
    exit_rate_matrix,
    hankel_diagnostic,
    model_exit_rates,
    shift_moments,
    type_polynomial,
)


class RelevanceError(ValueError):
    """The identifying variation across notices is absent."""


class EstimationError(RuntimeError):
    """Numerical failure during estimation."""


# ---------------------------------------------------------------------------
# Generalised identification: kappa / gamma
# ---------------------------------------------------------------------------


def central_moment_kappas(kappa1: float, mu_S) -> tuple[float, float, float]:
    """Moment differences ``(kappa2, kappa3, kappa4)`` implied by a pure mean shift.

    ``mu_S`` are the first three raw moments of the reference group.
    """
    m1, m2, m3 = (float(v) for v in mu_S[:3])
    k = float(kappa1)
    k2 = k * (k + 2 * m1)
    k3 = k * (k**2 + 3 * k * m1 + 3 * m2)
    k4 = k * (k**3 + 4 * k**2 * m1 + 6 * k * m2 + 4 * m3)
    return k2, k3, k4


def mean_shift_kappas(kappa1: float, mu_ref, Dbar: int) -> np.ndarray:
    """``kappa_1..kappa_Dbar`` for a mean shift, any ``Dbar`` (binomial expansion)."""
    raw = np.concatenate(([1.0], np.asarray(mu_ref, dtype=float)[:Dbar]))
    return (shift_moments(raw, kappa1) - raw)[1:]


def _shift_difference(kappa1: float, mu_lower) -> float:
    """``E[(nu + kappa1)^k] - E[nu^k]`` from ``mu_1..mu_{k-1}``."""
    mu = np.concatenate(([1.0], np.asarray(mu_lower, dtype=float)))
    k = mu.size
    return float(sum(math.comb(k, j) * kappa1 ** (k - j) * mu[j] for j in range(k)))


@dataclass(frozen=True)
class GeneralizedSpec:
    """Known departures from independence (``kappa``) and stationarity (``gamma``).

    ``kappa`` lists ``mu_{other,d} - mu_{ref,d}`` for ``d = 1..Dbar`` and
    ``gamma`` lists ``psi_other(d) / psi_ref(d)`` for ``d = 2..Dbar``.  When
    ``kappa1`` is set instead of ``kappa``, the higher differences follow from
    a pure mean shift of the reference group's distribution.
    """

    kappa: tuple | None = None
    gamma: tuple | float | None = None
    kappa1: float | None = None
    reference: int = 0
    other: int = 1

    def __post_init__(self):
        if self.kappa is not None and self.kappa1 is not None:
            raise ValueError("give either kappa or kappa1, not both")
        g = self.gamma
        if g is not None and np.any(np.asarray(g, dtype=float) <= 0):
            raise ValueError("gamma must be positive")

    @classmethod
    def baseline(cls):
        return cls()

    @classmethod
    def mean_shift(cls, kappa1: float):
        """Exercise 1: mean of the type differs, shape identical, stationarity kept."""
        return cls(kappa1=float(kappa1))

    @classmethod
    def hazard_ratio(cls, gamma: float):
        """Exercise 2: independence kept, later hazards differ by a constant ratio."""
        return cls(gamma=float(gamma))

    @classmethod
    def joint(cls, kappa1: float, gamma: float):
        """Exercise 3: both relaxed."""
        return cls(kappa1=float(kappa1), gamma=float(gamma))

    @property
    def is_baseline(self) -> bool:
        k0 = (self.kappa is None or not np.any(self.kappa)) and not self.kappa1
        g0 = self.gamma is None or np.all(np.asarray(self.gamma, dtype=float) == 1.0)
        return bool(k0 and g0)

    def gamma_path(self, Dbar: int) -> np.ndarray:
        if self.gamma is None:
            return np.ones(Dbar - 1)
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            return np.full(Dbar - 1, float(g))
        if g.shape != (Dbar - 1,):
            raise ValueError(f"gamma needs {Dbar - 1} entries for d=2..{Dbar}")
        return g

    def kappa_path(self, mu_ref, Dbar: int) -> np.ndarray:
        if self.kappa1 is not None:
            return mean_shift_kappas(self.kappa1, mu_ref, Dbar)
        if self.kappa is None:
            return np.zeros(Dbar)
        k = np.asarray(self.kappa, dtype=float)
        if k.shape != (Dbar,):
            raise ValueError(f"kappa needs {Dbar} entries")
        return k

    def matrices(self, mu_ref, J: int, Dbar: int):
        """Per-notice ``gamma`` (J, Dbar-1) and ``kappa`` (J, Dbar) arrays."""
        if self.is_baseline:
            return None, None
        gam = np.ones((J, Dbar - 1))
        kap = np.zeros((J, Dbar))
        gam[self.other] = self.gamma_path(Dbar)
        kap[self.other] = self.kappa_path(mu_ref, Dbar)
        return gam, kap

    def label(self) -> dict:
        g = self.gamma
        return {
            "kappa1": self.kappa1 if self.kappa1 is not None else (None if self.kappa is None else float(self.kappa[0])),
            "gamma": None if g is None else (float(g) if np.ndim(g) == 0 else [float(x) for x in g]),
        }


# ---------------------------------------------------------------------------
# Closed-form identification
# ---------------------------------------------------------------------------


def _table_pair(table: ExitRateTable, pair, Dbar):
    if Dbar is None:
        Dbar = table.Dbar
    if Dbar > table.Dbar:
        raise ValueError(f"table only has {table.Dbar} durations")
    if not table.estimable[list(pair), :Dbar].all():
        raise ValueError("identification needs estimable cells for d = 1..Dbar in both notices")
    # the triangular solves amplify rounding in the higher moments, so
    # identification runs in extended precision and rounds once at the end
    h = table.hazard[:, :Dbar].astype(np.longdouble)
    S = np.ones((h.shape[0], Dbar + 1), dtype=np.longdouble)
    S[:, 1:] = np.cumprod(1 - h, axis=1)
    return S, h * S[:, :-1], Dbar


def solve_moments(psi_path: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Forward-substitute the triangular system ``g(d) = psi(d) sum_k c_k(d) mu_k``."""
    D = psi_path.shape[0]
    mu = np.zeros(D, dtype=np.result_type(psi_path, g))
    for d in range(1, D + 1):
        # g(d) / psi(d) = sum_k c_k(d) mu_k with c_k the coefficients of S(d-1)
        c = type_polynomial(psi_path[: d - 1], "survival")
        mu[d - 1] = (g[d - 1] / psi_path[d - 1] - c[: d - 1] @ mu[: d - 1]) / c[d - 1]
    return mu


def _check_admissible(params: ModelParams, what: str):
    psi = params.psi_matrix()
    if np.any(psi <= 0) or np.any(psi >= 1):
        warnings.warn(f"{what}: structural hazards outside (0, 1): {psi.round(6).tolist()}", InadmissibleWarning)
    hankel_diagnostic(params.moments)


def closed_form_identify(table: ExitRateTable, Dbar: int | None = None, pair=(0, 1)) -> ModelParams:
    """Structural hazards and type moments from two notices' exit rates.

    With the mean type normalised to one, first-period hazards equal first
    period exit rates, later hazards follow from the cross-notice difference
    in survival, and moments solve the triangular exit-probability system of
    the first notice in ``pair``.  Notices outside ``pair`` only contribute
    their first-period hazard.
    """
    l, lp = pair
    S, g, Dbar = _table_pair(table, pair, Dbar)
    psi1 = g[:, 0].copy()
    tail = np.zeros(Dbar - 1, dtype=S.dtype)
    for d in range(2, Dbar + 1):
        den = S[lp, d - 1] - S[l, d - 1]
        if abs(den) < 1e-12:
            raise RelevanceError(
                f"survival to d={d - 1} does not differ across notices "
                f"{table.notice_labels[l]!r} and {table.notice_labels[lp]!r}; first-period hazards must differ"
            )
        tail[d - 2] = (g[lp, d - 1] * g[l, 0] - g[l, d - 1] * g[lp, 0]) / den
    if Dbar > 1 and abs(S[lp, 1] - S[l, 1]) < 1e-12:
        raise RelevanceError("first-period exit rates are equal across notices")
    psi_l = np.concatenate(([psi1[l]], tail))
    mu = solve_moments(psi_l, g[l])
    params = ModelParams(psi1=psi1, tail=tail, moments=mu, notice_labels=table.notice_labels)
    _check_admissible(params, "closed-form identification")
    return params


def generalized_identify(table: ExitRateTable, spec: GeneralizedSpec, Dbar: int | None = None) -> ModelParams:
    """Recursive identification under known ``kappa``/``gamma``.

    Induction on ``d``: with the reference mean fixed at one, ``d = 1`` pins
    both first-period hazards; each later step solves the other notice's
    hazard from the two exit probabilities, then the reference moment from
    its triangular equation.
    """
    l, lp = spec.reference, spec.other
    S, g, Dbar = _table_pair(table, (l, lp), Dbar)
    gam = spec.gamma_path(Dbar)
    explicit = None if spec.kappa1 is not None else spec.kappa_path(None, Dbar)
    mu_l, mu_lp, psi_l, psi_lp, kappa = np.zeros((5, Dbar), dtype=S.dtype)

    kappa[0] = spec.kappa1 if explicit is None else explicit[0]
    mu_l[0] = 1.0
    mu_lp[0] = 1.0 + kappa[0]
    if mu_lp[0] <= 0:
        raise RelevanceError("kappa_1 <= -1 leaves the other notice with a non-positive mean type")
    psi_l[0] = g[l, 0]
    psi_lp[0] = g[lp, 0] / mu_lp[0]
    Gamma = psi_lp[0] / psi_l[0]  # gamma_1 * ... * gamma_{d-1}

    for d in range(2, Dbar + 1):
        kappa[d - 1] = _shift_difference(spec.kappa1, mu_l[: d - 1]) if explicit is None else explicit[d - 1]
        # E[nu S(d-1)] without its top-order term, for each notice
        A = type_polynomial(psi_l[: d - 1], "survival")[: d - 1] @ mu_l[: d - 1]
        Ap = type_polynomial(psi_lp[: d - 1], "survival")[: d - 1] @ mu_lp[: d - 1]
        Psi_lp = np.prod(psi_lp[: d - 1])
        Gamma_d = Gamma * gam[d - 2]
        num = g[lp, d - 1] - Gamma_d * g[l, d - 1]
        den = Ap - Gamma * A + (-1) ** (d - 1) * kappa[d - 1] * Psi_lp
        scale = max(abs(g[lp, d - 1]), abs(Gamma_d * g[l, d - 1]), 1e-300)
        if abs(num) < 1e-13 * scale or abs(den) < 1e-13:
            raise RelevanceError(f"generalised identification denominator vanishes at d={d}")
        psi_lp[d - 1] = num / den
        psi_l[d - 1] = psi_lp[d - 1] / gam[d - 2]
        Psi_l = np.prod(psi_l[: d - 1])
        mu_l[d - 1] = (-1) ** d / Psi_l * (A - g[l, d - 1] / psi_l[d - 1])
        mu_lp[d - 1] = mu_l[d - 1] + kappa[d - 1]
        Gamma = Gamma_d

    J = table.n_notices
    psi1 = table.hazard[:, 0].astype(S.dtype)
    psi1[l], psi1[lp] = psi_l[0], psi_lp[0]
    gmat = np.ones((J, Dbar - 1))
    kmat = np.zeros((J, Dbar))
    gmat[lp] = gam
    kmat[lp] = kappa
    params = ModelParams(
        psi1=psi1, tail=psi_l[1:], moments=mu_l, notice_labels=table.notice_labels,
        gamma=None if spec.is_baseline else gmat, kappa=None if spec.is_baseline else kmat,
    )
    _check_admissible(params, "generalised identification")
    return params


# ---------------------------------------------------------------------------
# Moment conditions
# ---------------------------------------------------------------------------


def individual_moment(record: DurationRecord, theta: ModelParams, p_hat: float,
                      notice_labels=None) -> np.ndarray:
    """Moment vector of one record (length ``J * Dbar``)."""
    labels = notice_labels or theta.notice_labels
    J, Dbar = theta.n_notices, theta.Dbar
    h = model_exit_rates(theta)
    l = labels.index(record.notice)
    out = np.zeros(J * Dbar)
    d = np.arange(1, Dbar + 1)
    exit_ind = (record.duration == d) & (not record.censored)
    surv_ind = record.duration >= d
    out[l * Dbar:(l + 1) * Dbar] = (exit_ind - h[l] * surv_ind) / p_hat
    return out


def moment_contributions(records, theta: ModelParams, p_hat) -> np.ndarray:
    """``(n, J * Dbar)`` matrix of individual moment vectors."""
    data = as_spell_data(records)
    Dbar = theta.Dbar
    h = model_exit_rates(theta)
    p_hat = np.asarray(p_hat, dtype=float)
    n = len(data)
    out = np.zeros((n, theta.n_notices * Dbar))
    d = np.arange(1, Dbar + 1)
    exit_ind = (data.duration[:, None] == d) & ~data.censored[:, None]
    surv_ind = data.duration[:, None] >= d
    vals = (exit_ind - h[data.notice] * surv_ind) / p_hat[:, None]
    cols = data.notice[:, None] * Dbar + (d - 1)
    out[np.arange(n)[:, None], cols] = vals
    return out


@dataclass
class MomentData:
    """Sufficient statistics of the sample for the moments and their covariance.

    Moments are ``a - h * b`` cell by cell, where ``a`` and ``b`` are the
    weighted exit and at-risk indicators; ``Omega(h)`` needs only the
    cross-products of ``a`` and ``b``, which are stored once.
    """

    table: ExitRateTable
    aa: np.ndarray
    ab: np.ndarray
    bb: np.ndarray
    n: int

    @classmethod
    def from_records(cls, records, weights, Dbar: int) -> "MomentData":
        data = as_spell_data(records)
        w = np.asarray(weights, dtype=float)
        table = empirical_exit_rates(data, w, Dbar)
        J = data.n_notices
        k = J * Dbar
        aa = np.zeros((k, k))
        ab = np.zeros((k, k))
        bb = np.zeros((k, k))
        t = np.minimum(data.duration, Dbar + 1)
        exited = ~data.censored & (data.duration <= Dbar)
        w2 = w**2
        for l in range(J):
            sel = data.notice == l
            # squared-weight mass by capped duration, split by exit flag
            ex = np.bincount(t[sel & exited], weights=w2[sel & exited], minlength=Dbar + 2)[1:]
            al = np.bincount(t[sel], weights=w2[sel], minlength=Dbar + 2)[1:]
            tail_mass = np.cumsum(al[::-1])[::-1]  # mass with duration >= t
            o = l * Dbar
            for d in range(Dbar):
                aa[o + d, o + d] = ex[d]
                for e in range(Dbar):
                    if e <= d:
                        ab[o + d, o + e] = ex[d]
                    bb[o + d, o + e] = tail_mass[max(d, e)]
        n = len(data)
        return cls(table=table, aa=aa / n, ab=ab / n, bb=bb / n, n=n)

    def omega(self, h_flat: np.ndarray) -> np.ndarray:
        H = np.diag(h_flat)
        return self.aa - self.ab @ H - H @ self.ab.T + H @ self.bb @ H


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GmmSpec:
    tail: str = "nonparametric"
    Dbar: int = 4
    two_step: bool = True
    generalized: GeneralizedSpec | None = None
    pair: tuple = (0, 1)

    def __post_init__(self):
        if self.tail not in ("nonparametric", "log-logistic"):
            raise ValueError(f"tail must be 'nonparametric' or 'log-logistic', got {self.tail!r}")
        if self.Dbar < 2:
            raise ValueError("Dbar must be at least 2")


@dataclass(frozen=True)
class _Layout:
    J: int
    Dbar: int
    parametric: bool
    labels: tuple
    generalized: GeneralizedSpec | None

    @property
    def n_tail(self):
        return 2 if self.parametric else self.Dbar - 1

    @property
    def size(self):
        return self.J + self.n_tail + self.Dbar - 1

    def names(self):
        out = [f"psi1[{lab}]" for lab in self.labels]
        out += ["alpha1", "alpha2"] if self.parametric else [f"psi({d})" for d in range(2, self.Dbar + 1)]
        out += [f"mu{k}" for k in range(2, self.Dbar + 1)]
        return out

    def params(self, x: np.ndarray) -> ModelParams:
        """Natural parameter vector to :class:`ModelParams`."""
        J, nt = self.J, self.n_tail
        psi1 = x[:J]
        tail = LogLogistic(x[J], x[J + 1]) if self.parametric else x[J:J + nt]
        mu = np.concatenate(([1.0], x[J + nt:]))
        gam = kap = None
        if self.generalized is not None:
            gam, kap = self.generalized.matrices(mu, J, self.Dbar)
        return ModelParams(psi1=psi1, tail=tail, moments=mu, notice_labels=self.labels, gamma=gam, kappa=kap)

    def arrays(self, x: np.ndarray):
        """``(psi, moments)`` as ``(J, Dbar)`` arrays, bypassing :class:`ModelParams`."""
        J, nt, D = self.J, self.n_tail, self.Dbar
        psi = np.empty((J, D))
        psi[:, 0] = x[:J]
        if self.parametric:
            if x[J] <= 0 or x[J + 1] <= 0:
                raise ValueError("log-logistic parameters must be positive")
            psi[:, 1:] = log_logistic_path(x[J], x[J + 1], np.arange(2, D + 1))
        else:
            psi[:, 1:] = x[J:J + nt]
        mu = np.concatenate(([1.0], x[J + nt:]))
        mom = np.tile(mu, (J, 1))
        if self.generalized is not None and not self.generalized.is_baseline:
            gam, kap = self.generalized.matrices(mu, J, D)
            psi[:, 1:] *= gam
            mom += kap
        return psi, mom

    def natural(self, p: ModelParams) -> np.ndarray:
        tail = [p.tail.alpha1, p.tail.alpha2] if p.is_parametric else list(p.tail)
        return np.concatenate((p.psi1, tail, p.moments[1:]))

    def to_free(self, x: np.ndarray) -> np.ndarray:
        J, nt = self.J, self.n_tail
        z = np.empty_like(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            z[:J] = np.log(x[:J] / (1 - x[:J]))
            if self.parametric:
                z[J:J + nt] = np.log(x[J:J + nt])
            else:
                z[J:J + nt] = np.log(x[J:J + nt] / (1 - x[J:J + nt]))
            z[J + nt:] = np.log(x[J + nt:])
        return z

    def from_free(self, z: np.ndarray) -> np.ndarray:
        J, nt = self.J, self.n_tail
        x = np.empty_like(z)
        x[:J] = 1 / (1 + np.exp(-z[:J]))
        x[J:J + nt] = np.exp(z[J:J + nt]) if self.parametric else 1 / (1 + np.exp(-z[J:J + nt]))
        x[J + nt:] = np.exp(z[J + nt:])
        return x


_PENALTY = 1e6


def _moment_vector(layout: _Layout, x: np.ndarray, table: ExitRateTable, cells: np.ndarray):
    """Stacked sample moments at natural parameters ``x``; ``None`` if inadmissible."""
    try:
        psi, mom = layout.arrays(x)
    except ValueError:
        return None
    if not np.all(np.isfinite(psi)) or np.any(psi <= 0) or np.any(psi >= 1):
        return None
    h, es = exit_rate_matrix(psi, mom)
    if np.any(es <= 0) or not np.all(np.isfinite(h)) or np.any(h <= 0) or np.any(h >= 1):
        return None
    m = table.numerator - h * table.denominator
    return m.ravel()[cells], h.ravel()


# ---------------------------------------------------------------------------
# Starting values
# ---------------------------------------------------------------------------


def _fit_log_logistic(tail: np.ndarray, Dbar: int) -> LogLogistic:
    """Least-squares log-logistic approximation of a hazard path ``psi(2..Dbar)``."""
    d = np.arange(2, Dbar + 1)
    target = np.clip(tail, 1e-4, 0.999)

    def resid(z):
        return log_logistic_path(np.exp(z[0]), np.exp(z[1]), d) - target

    best = None
    for a1, a2 in ((1.0, 1.0), (4.0, 1.5), (8.0, 3.0), (0.5, 0.7)):
        r = optimize.least_squares(resid, np.log([a1, a2]), method="lm", xtol=1e-12, ftol=1e-12)
        if best is None or r.cost < best.cost:
            best = r
    a1, a2 = np.exp(np.clip(best.x, -20, 20))
    return LogLogistic(float(a1), float(a2))


def log_logistic_path(a1, a2, d):
    z = (d / a1) ** a2
    return (a2 / a1) * (d / a1) ** (a2 - 1) / (1 + z)


def _starting_values(table: ExitRateTable, spec: GmmSpec, layout: _Layout) -> np.ndarray:
    Dbar = spec.Dbar
    cand = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if spec.generalized is not None and not spec.generalized.is_baseline:
                cand = generalized_identify(table, spec.generalized, Dbar)
            else:
                cand = closed_form_identify(table, Dbar, spec.pair)
        x = np.concatenate((cand.psi1, cand.tail, cand.moments[1:]))
        ok = np.all(np.isfinite(x)) and np.all(x > 0) and np.all(cand.psi_matrix() < 1) and np.all(cand.psi_matrix() > 0)
    except (RelevanceError, ValueError, ZeroDivisionError):
        ok = False
    h = table.hazard
    if not ok:
        psi1 = np.clip(np.nan_to_num(h[:, 0], nan=0.1), 1e-3, 0.999)
        tail = np.clip(np.nanmean(h[:, 1:Dbar], axis=0), 1e-3, 0.999)
        mu = np.ones(Dbar - 1)
    else:
        psi1, tail, mu = cand.psi1, cand.tail, cand.moments[1:]
    psi1 = np.clip(psi1, 1e-4, 1 - 1e-4)
    if layout.parametric:
        ll = _fit_log_logistic(np.asarray(tail), Dbar)
        tail = np.array([ll.alpha1, ll.alpha2])
    else:
        tail = np.clip(tail, 1e-4, 1 - 1e-4)
    mu = np.where(mu > 0, mu, 1.0)
    x0 = np.concatenate((psi1, tail, mu))
    if _moment_vector(layout, x0, table, np.ones(layout.J * Dbar, bool)) is None:
        x0 = np.concatenate((psi1, tail, np.ones(Dbar - 1)))
    return x0


# ---------------------------------------------------------------------------
# Minimisation
# ---------------------------------------------------------------------------


def _minimize(layout: _Layout, table: ExitRateTable, cells: np.ndarray, W: np.ndarray, x0: np.ndarray):
    """Levenberg-Marquardt on the whitened moments, with a simplex restart if it stalls."""
    L = np.linalg.cholesky(W)

    def resid(z):
        out = _moment_vector(layout, layout.from_free(z), table, cells)
        if out is None:
            return np.full(cells.sum(), _PENALTY)
        return L.T @ out[0]

    def obj(z):
        r = resid(z)
        return float(r @ r)

    z0 = layout.to_free(x0)
    if not np.all(np.isfinite(z0)):
        z0 = np.nan_to_num(z0, nan=0.0, posinf=5.0, neginf=-5.0)
    method = "lm" if cells.sum() >= z0.size else "trf"

    def polish(z):
        try:
            ls = optimize.least_squares(resid, z, method=method, xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                        max_nfev=500 * z.size)
        except (ValueError, np.linalg.LinAlgError):
            return None
        return obj(ls.x), ls.x, ls.status > 0

    candidates = [(obj(z0), z0, False)]
    first = polish(z0)
    if first is not None:
        candidates.append(first)
    if first is None or not first[2] or first[0] >= _PENALTY:
        # simplex from the start value, then polish again
        nm = optimize.minimize(obj, z0, method="Nelder-Mead",
                               options={"maxfev": 400 * z0.size, "xatol": 1e-10, "fatol": 1e-24, "adaptive": True})
        candidates.append((nm.fun, nm.x, False))
        second = polish(nm.x)
        if second is not None:
            candidates.append(second)
    fun, z, _ = min(candidates, key=lambda c: c[0])
    converged = fun < _PENALTY
    return layout.from_free(z), fun, converged


def _jacobian(layout: _Layout, x: np.ndarray, table: ExitRateTable, cells: np.ndarray, rel: float = 1e-6):
    k = x.size
    M = np.zeros((int(cells.sum()), k))
    for j in range(k):
        h = rel * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        up = _moment_vector(layout, xp, table, cells)
        dn = _moment_vector(layout, xm, table, cells)
        if up is None or dn is None:
            # one-sided at the admissibility boundary
            base = _moment_vector(layout, x, table, cells)[0]
            if up is not None:
                M[:, j] = (up[0] - base) / h
            elif dn is not None:
                M[:, j] = (base - dn[0]) / h
            continue
        M[:, j] = (up[0] - dn[0]) / (2 * h)
    return M


def _safe_inverse(Omega: np.ndarray, notes: list) -> np.ndarray:
    cond = np.linalg.cond(Omega)
    if not np.isfinite(cond) or cond > 1e12:
        ridge = 1e-10 * np.trace(Omega) / Omega.shape[0]
        Omega = Omega + ridge * np.eye(Omega.shape[0])
        msg = f"moment covariance near singular (cond {cond:.2e}); ridge {ridge:.2e} added"
        warnings.warn(msg, RuntimeWarning)
        notes.append(msg)
    inv = np.linalg.inv(Omega)
    return (inv + inv.T) / 2


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class GmmResult:
    theta_hat: ModelParams
    param_names: list
    estimates: np.ndarray
    vcov: np.ndarray | None
    implied_hazards: list
    avg_type_path: np.ndarray
    j_stat: float | None
    j_df: int
    j_pvalue: float | None
    objective: float
    weighting: str
    n: int | None
    converged: bool
    observed: ExitRateTable
    notes: list = field(default_factory=list)
    spec: GmmSpec | None = None

    @property
    def se(self) -> np.ndarray | None:
        if self.vcov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.vcov), 0, None))

    def structural_path(self, notice: int | None = None) -> np.ndarray:
        """Estimated ``psi(d)``; ``d = 1`` uses ``notice`` or the notice average."""
        tail = self.theta_hat.tail_path()
        first = self.theta_hat.psi1.mean() if notice is None else self.theta_hat.psi1[notice]
        return np.concatenate(([first], tail))

    def to_dict(self) -> dict:
        se = self.se
        th = self.theta_hat
        return {
            "spec": None if self.spec is None else {
                "tail": self.spec.tail, "Dbar": self.spec.Dbar, "two_step": self.spec.two_step,
                "generalized": None if self.spec.generalized is None else self.spec.generalized.label(),
            },
            "n": self.n,
            "parameters": [
                {"name": nm, "estimate": float(v), "se": None if se is None else float(s)}
                for nm, v, s in zip(self.param_names, self.estimates, se if se is not None else [None] * len(self.estimates))
            ],
            "vcov": None if self.vcov is None else self.vcov.tolist(),
            "implied_hazards": self.implied_hazards,
            "avg_type_path": {lab: self.avg_type_path[l].tolist() for l, lab in enumerate(th.notice_labels)},
            "moments": th.moments.tolist(),
            "j_stat": self.j_stat,
            "j_df": self.j_df,
            "j_pvalue": self.j_pvalue,
            "objective": self.objective,
            "weighting": self.weighting,
            "converged": self.converged,
            "observed_hazard": {lab: [None if np.isnan(v) else float(v) for v in self.observed.hazard[l]]
                                for l, lab in enumerate(self.observed.notice_labels)},
            "notes": list(self.notes),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def hazard_rows(self) -> list[dict]:
        """Plot table: one row per (d, notice) with estimate, SE, observed rate, average type."""
        th = self.theta_hat
        obs = self.observed.hazard
        se_by_key = {(r["d"], r["notice"]): r for r in self.implied_hazards}
        rows = []
        for d in range(1, th.Dbar + 1):
            for l, lab in enumerate(th.notice_labels):
                key = (d, lab) if (d, lab) in se_by_key else (d, None)
                r = se_by_key[key]
                rows.append({
                    "d": d, "notice": lab, "psi_hat": r["psi"], "se": r["se"],
                    "observed_hazard": None if np.isnan(obs[l, d - 1]) else float(obs[l, d - 1]),
                    "average_type": float(self.avg_type_path[l, d - 1]),
                })
        return rows


def _implied_hazards(layout: _Layout, x: np.ndarray, vcov: np.ndarray | None) -> list[dict]:
    """Structural hazards with delta-method standard errors."""

    def path(xx):
        p = layout.params(xx)
        return p.psi_matrix()

    base = path(x)
    grads = np.zeros(base.shape + (x.size,))
    if vcov is not None:
        for j in range(x.size):
            h = 1e-6 * max(abs(x[j]), 1.0)
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            grads[..., j] = (path(xp) - path(xm)) / (2 * h)
    rows = []
    per_notice_tail = layout.generalized is not None and not layout.generalized.is_baseline
    for d in range(1, layout.Dbar + 1):
        notices = range(layout.J) if (d == 1 or per_notice_tail) else [0]
        for l in notices:
            g = grads[l, d - 1]
            se = None if vcov is None else float(np.sqrt(max(g @ vcov @ g, 0.0)))
            rows.append({"d": d, "notice": layout.labels[l] if (d == 1 or per_notice_tail) else None,
                         "psi": float(base[l, d - 1]), "se": se})
    return rows


def _estimate_from_moments(md_table: ExitRateTable, md: MomentData | None, spec: GmmSpec,
                           weight: np.ndarray | None, x0: np.ndarray | None = None) -> GmmResult:
    table = md_table
    J = table.n_notices
    if J < 2:
        raise ValueError("need at least two notice categories")
    layout = _Layout(J, spec.Dbar, spec.tail == "log-logistic", table.notice_labels, spec.generalized)
    cells = table.estimable[:, : spec.Dbar].ravel()
    if table.Dbar != spec.Dbar:
        raise ValueError("table and spec disagree on Dbar")
    k = int(cells.sum())
    notes = []
    if not cells.all():
        notes.append(f"{int((~cells).sum())} empty cells excluded from the moment vector")
    if k < layout.size:
        raise EstimationError(f"{k} usable moments for {layout.size} parameters")
    if x0 is None:
        x0 = _starting_values(table, spec, layout)

    if weight is not None:
        W = np.asarray(weight, dtype=float)
        weighting = "fixed"
        x, fun, conv = _minimize(layout, table, cells, W, x0)
        Omega_w = None
    else:
        x, fun, conv = _minimize(layout, table, cells, np.eye(k), x0)
        W = np.eye(k)
        weighting = "identity"
        Omega_w = None
        if spec.two_step and md is not None:
            h1 = _moment_vector(layout, x, table, np.ones(J * spec.Dbar, bool))[1]
            Omega_w = md.omega(h1)[np.ix_(cells, cells)]
            W = _safe_inverse(Omega_w, notes)
            weighting = "efficient"
            x, fun, conv = _minimize(layout, table, cells, W, x)

    mv = _moment_vector(layout, x, table, cells)
    if mv is None:
        raise EstimationError("estimation ended at an inadmissible parameter value")
    mbar, hfull = mv
    objective = float(mbar @ W @ mbar)
    df = k - layout.size

    vcov = None
    j_stat = j_p = None
    if md is not None:
        n = md.n
        Omega = md.omega(hfull)[np.ix_(cells, cells)]
        Oinv = _safe_inverse(Omega, notes)
        M = _jacobian(layout, x, table, cells)
        try:
            if weighting == "efficient" or df == 0:
                vcov = np.linalg.inv(M.T @ Oinv @ M) / n
            else:
                bread = np.linalg.inv(M.T @ W @ M)
                vcov = bread @ M.T @ W @ Omega @ W @ M @ bread / n
            vcov = (vcov + vcov.T) / 2
        except np.linalg.LinAlgError:
            notes.append("singular Jacobian; covariance not available")
        if df > 0 and weighting == "efficient":
            j_stat = float(n * mbar @ W @ mbar)
            j_p = float(stats.chi2.sf(j_stat, df))
        elif df == 0:
            notes.append("just identified; J-test not applicable")
    if not conv:
        notes.append("optimizer did not reach an admissible minimum")

    theta = layout.params(x)
    try:
        avg = average_type_paths(theta)
    except DegenerateSurvivalError:
        avg = np.full((J, spec.Dbar), np.nan)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        hankel_diagnostic(theta.moments)
    notes.extend(str(w.message) for w in caught)
    return GmmResult(
        theta_hat=theta, param_names=layout.names(), estimates=x, vcov=vcov,
        implied_hazards=_implied_hazards(layout, x, vcov), avg_type_path=avg,
        j_stat=j_stat, j_df=df, j_pvalue=j_p, objective=objective, weighting=weighting,
        n=None if md is None else md.n, converged=conv, observed=table, notes=notes, spec=spec,
    )


def gmm_estimate(records, model=None, spec: GmmSpec | None = None, weight: np.ndarray | None = None,
                 p_hat: np.ndarray | None = None) -> GmmResult:
    """Two-step GMM on individual spells with inverse-propensity weights.

    ``model`` is a fitted :class:`~mixhazard.propensity.PropensityModel`;
    alternatively pass own-notice scores in ``p_hat``.  With neither, the
    sample notice shares are used (no covariate adjustment).  A fixed
    ``weight`` matrix skips the two-step update.
    """
    spec = spec or GmmSpec()
    data = as_spell_data(records)
    if data.n_notices < 2 or np.unique(data.notice).size < 2:
        raise ValueError("need at least two notice categories")
    if p_hat is None:
        if model is not None:
            p_hat = model.own_scores(data)
        else:
            share = np.bincount(data.notice, minlength=data.n_notices) / len(data)
            p_hat = share[data.notice]
    p_hat = np.asarray(p_hat, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        md = MomentData.from_records(data, 1.0 / p_hat, spec.Dbar)
    return _estimate_from_moments(md.table, md, spec, weight)


def gmm_estimate_table(table: ExitRateTable, spec: GmmSpec | None = None, weight: np.ndarray | None = None,
                       x0: np.ndarray | None = None) -> GmmResult:
    """GMM on a given exit-rate table (population or pre-aggregated).

    Without individual data there is no covariance estimate: the fit uses
    ``weight`` (identity by default) and reports no standard errors.
    """
    spec = spec or GmmSpec(Dbar=table.Dbar)
    if table.Dbar != spec.Dbar:
        table = ExitRateTable(table.numerator[:, : spec.Dbar], table.denominator[:, : spec.Dbar],
                              table.notice_labels, table.kind)
    return _estimate_from_moments(table, None, replace(spec, two_step=False), weight, x0)


def gmm_objective(table: ExitRateTable, theta: ModelParams, weight: np.ndarray | None = None) -> float:
    """``m' W m`` for the table's moments at ``theta`` (identity ``W`` by default)."""
    h = model_exit_rates(theta)
    cells = table.estimable[:, : theta.Dbar].ravel()
    m = (table.numerator[:, : theta.Dbar] - h * table.denominator[:, : theta.Dbar]).ravel()[cells]
    W = np.eye(m.size) if weight is None else weight
    return float(m @ W @ m)


# ---------------------------------------------------------------------------
# Residual grids
# ---------------------------------------------------------------------------


def grid_values(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(count), 12)


def make_grid(exercise: int, kappa=(-0.1, 0.1, 0.01), gamma=(0.9, 1.1, 0.01)) -> list[GeneralizedSpec]:
    """Grid of generalised specifications for exercises 1 (kappa1), 2 (gamma), 3 (both)."""
    if exercise == 1:
        return [GeneralizedSpec.mean_shift(k) for k in grid_values(*kappa)]
    if exercise == 2:
        return [GeneralizedSpec.hazard_ratio(g) for g in grid_values(*gamma)]
    if exercise == 3:
        return [GeneralizedSpec.joint(k, g) for k in grid_values(*kappa) for g in grid_values(*gamma)]
    raise ValueError("exercise must be 1, 2 or 3")


@dataclass
class GridResult:
    points: list
    weight: np.ndarray
    baseline: GmmResult | None

    @property
    def valid(self):
        return [p for p in self.points if p["objective"] is not None]

    @property
    def argmin(self) -> dict:
        return min(self.valid, key=lambda p: p["objective"])

    def best(self, k: int = 10) -> list[dict]:
        return sorted(self.valid, key=lambda p: p["objective"])[:k]

    def rows(self) -> list[dict]:
        out = []
        for p in self.points:
            row = {"kappa1": p["kappa1"], "gamma": p["gamma"], "objective": p["objective"], "error": p["error"]}
            for d, v in enumerate(p["psi"] or [], start=1):
                row[f"psi{d}"] = v
            out.append(row)
        return out


def residual_grid(records, model=None, grid: list[GeneralizedSpec] | None = None, spec: GmmSpec | None = None,
                  p_hat=None, threads: int = 1, weight: np.ndarray | None = None) -> GridResult:
    """Re-estimate under each generalised specification and record the criterion.

    Every point is fitted with the same weighting matrix, the efficient one
    at the first-step baseline estimate unless ``weight`` is given, so the
    criteria are comparable across the grid.  The reported objective is
    ``n * m' W m``.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    spec = spec or GmmSpec(tail="log-logistic")
    data = as_spell_data(records)
    if p_hat is None:
        if model is not None:
            p_hat = model.own_scores(data)
        else:
            share = np.bincount(data.notice, minlength=data.n_notices) / len(data)
            p_hat = share[data.notice]
    p_hat = np.asarray(p_hat, dtype=float)
    baseline = None
    if weight is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            md = MomentData.from_records(data, 1.0 / p_hat, spec.Dbar)
            step1 = _estimate_from_moments(md.table, md, replace(spec, two_step=False, generalized=None), None)
            layout = _Layout(md.table.n_notices, spec.Dbar, spec.tail == "log-logistic", md.table.notice_labels, None)
            cells = md.table.estimable.ravel()
            h1 = _moment_vector(layout, step1.estimates, md.table, np.ones(cells.size, bool))[1]
            weight = _safe_inverse(md.omega(h1)[np.ix_(cells, cells)], [])
        baseline = step1
    n = len(data)

    def run(g: GeneralizedSpec) -> dict:
        point = {**g.label(), "objective": None, "error": None, "psi": None, "estimates": None}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = gmm_estimate(data, spec=replace(spec, generalized=g), weight=weight, p_hat=p_hat)
            if not res.converged:
                raise EstimationError("no admissible minimum")
            point["objective"] = n * res.objective
            point["psi"] = res.structural_path().tolist()
            point["estimates"] = dict(zip(res.param_names, map(float, res.estimates)))
        except (EstimationError, RelevanceError, ValueError, np.linalg.LinAlgError) as exc:
            point["error"] = str(exc)
        return point

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(run, grid))
    else:
        points = [run(g) for g in grid]
    return GridResult(points=points, weight=weight, baseline=baseline)
