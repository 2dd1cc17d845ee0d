"""Model mathematics for the discrete-time Mixed Hazard model.

An individual of type ``nu`` with notice ``l`` leaves unemployment at duration
``d`` with probability ``psi_l(d) * nu``.  Survival and exit probabilities are
polynomials in ``nu``; their expectations are therefore exact linear functions
of the raw moments of the type distribution, which is what every routine in
this module exploits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


class DegenerateSurvivalError(ArithmeticError):
    """Expected survival is non-positive for the supplied parameters."""


class InadmissibleWarning(UserWarning):
    """Recovered or supplied parameters violate the model's admissibility."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DurationRecord:
    """One unemployment spell.

    ``duration`` is the observed bin index; when ``censored`` is true it is the
    elapsed duration at the survey date and the exit itself is unobserved.
    """

    id: str
    notice: str
    duration: int
    censored: bool = False
    covariates: dict = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if int(self.duration) != self.duration or self.duration < 1:
            raise ValueError(f"record {self.id}: duration must be a positive integer, got {self.duration}")
        if not self.weight > 0:
            raise ValueError(f"record {self.id}: weight must be positive, got {self.weight}")


@dataclass
class SpellData:
    """Column-oriented collection of spells.

    Notices are stored as integer codes into ``notice_labels`` and covariates
    as an ``(n, k)`` float matrix, so large simulated panels never need to be
    materialised as :class:`DurationRecord` objects.
    """

    notice: np.ndarray
    duration: np.ndarray
    censored: np.ndarray
    notice_labels: tuple
    covariates: np.ndarray | None = None
    covariate_names: tuple = ()
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.notice = np.asarray(self.notice, dtype=np.int64)
        self.duration = np.asarray(self.duration, dtype=np.int64)
        self.censored = np.asarray(self.censored, dtype=bool)
        n = self.notice.shape[0]
        if self.duration.shape != (n,) or self.censored.shape != (n,):
            raise ValueError("notice, duration and censored must be 1-d arrays of equal length")
        if n and self.duration.min() < 1:
            raise ValueError("durations must be positive integers")
        if n and (self.notice.min() < 0 or self.notice.max() >= len(self.notice_labels)):
            raise ValueError("notice codes out of range of notice_labels")
        if self.covariates is None:
            self.covariates = np.zeros((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ValueError("covariate_names does not match covariate columns")
        if self.ids is None:
            self.ids = np.array([str(i) for i in range(n)], dtype=object)
        self.notice_labels = tuple(self.notice_labels)
        self.covariate_names = tuple(self.covariate_names)

    def __len__(self):
        return self.notice.shape[0]

    @property
    def n_notices(self) -> int:
        return len(self.notice_labels)

    def subset(self, mask) -> "SpellData":
        mask = np.asarray(mask)
        return SpellData(
            notice=self.notice[mask],
            duration=self.duration[mask],
            censored=self.censored[mask],
            notice_labels=self.notice_labels,
            covariates=self.covariates[mask],
            covariate_names=self.covariate_names,
            ids=self.ids[mask],
        )

    def covariate(self, name: str) -> np.ndarray:
        return self.covariates[:, self.covariate_names.index(name)]

    @classmethod
    def from_records(cls, records: Iterable[DurationRecord], notice_labels: Sequence[str] | None = None):
        records = list(records)
        if notice_labels is None:
            notice_labels = sorted({r.notice for r in records})
        code = {lab: i for i, lab in enumerate(notice_labels)}
        names = sorted({k for r in records for k in r.covariates})
        X = np.array([[r.covariates[k] for k in names] for r in records], dtype=float).reshape(len(records), len(names))
        return cls(
            notice=[code[r.notice] for r in records],
            duration=[r.duration for r in records],
            censored=[r.censored for r in records],
            notice_labels=tuple(notice_labels),
            covariates=X,
            covariate_names=tuple(names),
            ids=np.array([r.id for r in records], dtype=object),
        )

    def to_records(self) -> list[DurationRecord]:
        return [
            DurationRecord(
                id=str(self.ids[i]),
                notice=self.notice_labels[self.notice[i]],
                duration=int(self.duration[i]),
                censored=bool(self.censored[i]),
                covariates=dict(zip(self.covariate_names, map(float, self.covariates[i]))),
            )
            for i in range(len(self))
        ]


def as_spell_data(records) -> SpellData:
    if isinstance(records, SpellData):
        return records
    return SpellData.from_records(records)


# ---------------------------------------------------------------------------
# Parameters and type distributions
# ---------------------------------------------------------------------------


def log_logistic_hazard(alpha1, alpha2, d):
    """Log-logistic structural hazard ``(a2/a1)(d/a1)^(a2-1) / (1 + (d/a1)^a2)``.

    Decreasing in ``d`` for ``alpha2 <= 1``; single-peaked with mode
    ``alpha1 * (alpha2 - 1) ** (1 / alpha2)`` otherwise.
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise ValueError(f"log-logistic parameters must be positive, got ({alpha1}, {alpha2})")
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("duration must be positive")
    z = (d / alpha1) ** alpha2
    out = (alpha2 / alpha1) * (d / alpha1) ** (alpha2 - 1) / (1.0 + z)
    return float(out) if out.ndim == 0 else out


def log_logistic_mode(alpha1: float, alpha2: float) -> float | None:
    if alpha2 <= 1:
        return None
    return alpha1 * (alpha2 - 1) ** (1 / alpha2)


@dataclass(frozen=True)
class LogLogistic:
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError(f"log-logistic parameters must be positive, got ({self.alpha1}, {self.alpha2})")

    def path(self, Dbar: int) -> np.ndarray:
        """Structural hazards for durations ``2..Dbar``."""
        return np.atleast_1d(log_logistic_hazard(self.alpha1, self.alpha2, np.arange(2, Dbar + 1)))


@dataclass(frozen=True)
class ModelParams:
    """Structural hazards and type moments.

    ``moments`` holds the raw moments ``mu_1..mu_Dbar`` of the type (``mu_1``
    is the scale normalisation and equals one for estimates).  ``tail`` is
    either an array of ``psi(2..Dbar)`` or a :class:`LogLogistic`.

    ``gamma`` and ``kappa`` carry the generalised model: row ``l`` of
    ``gamma`` multiplies the common tail for notice ``l`` and row ``l`` of
    ``kappa`` is added to the moments for notice ``l``.  Both default to the
    baseline (ones and zeros).
    """

    psi1: np.ndarray
    tail: np.ndarray | LogLogistic
    moments: np.ndarray
    notice_labels: tuple | None = None
    gamma: np.ndarray | None = None
    kappa: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "psi1", np.atleast_1d(np.asarray(self.psi1, dtype=float)))
        object.__setattr__(self, "moments", np.atleast_1d(np.asarray(self.moments, dtype=float)))
        if not isinstance(self.tail, LogLogistic):
            tail = np.atleast_1d(np.asarray(self.tail, dtype=float))
            if tail.shape != (self.Dbar - 1,):
                raise ValueError(f"nonparametric tail must have Dbar-1={self.Dbar - 1} entries, got {tail.shape}")
            object.__setattr__(self, "tail", tail)
        J = self.psi1.shape[0]
        if self.gamma is not None:
            g = np.asarray(self.gamma, dtype=float).reshape(J, self.Dbar - 1)
            object.__setattr__(self, "gamma", g)
        if self.kappa is not None:
            k = np.asarray(self.kappa, dtype=float).reshape(J, self.Dbar)
            object.__setattr__(self, "kappa", k)
        if self.notice_labels is None:
            object.__setattr__(self, "notice_labels", tuple(str(i) for i in range(J)))
        else:
            object.__setattr__(self, "notice_labels", tuple(self.notice_labels))

    @property
    def Dbar(self) -> int:
        return self.moments.shape[0]

    @property
    def n_notices(self) -> int:
        return self.psi1.shape[0]

    @property
    def is_parametric(self) -> bool:
        return isinstance(self.tail, LogLogistic)

    def tail_path(self) -> np.ndarray:
        if self.is_parametric:
            return self.tail.path(self.Dbar)
        return self.tail

    def psi_path(self, notice: int) -> np.ndarray:
        """Structural hazards ``psi_l(1..Dbar)`` for notice code ``notice``."""
        tail = self.tail_path()
        if self.gamma is not None:
            tail = tail * self.gamma[notice]
        return np.concatenate(([self.psi1[notice]], tail))

    def psi_matrix(self) -> np.ndarray:
        return np.vstack([self.psi_path(l) for l in range(self.n_notices)])

    def notice_moments(self, notice: int) -> np.ndarray:
        if self.kappa is None:
            return self.moments
        return self.moments + self.kappa[notice]

    def scaled(self, c: float) -> "ModelParams":
        """Same observable model with type rescaled by ``c`` (hazards by ``1/c``)."""
        k = np.arange(1, self.Dbar + 1)
        tail = self.tail
        if self.is_parametric:
            raise ValueError("log-logistic tails cannot be rescaled in closed form")
        kappa = None if self.kappa is None else self.kappa * c**k
        return replace(self, psi1=self.psi1 / c, tail=tail / c, moments=self.moments * c**k, kappa=kappa)


def _beta_raw_moments(a: float, b: float, kmax: int) -> np.ndarray:
    out = np.ones(kmax + 1)
    for k in range(1, kmax + 1):
        out[k] = out[k - 1] * (a + k - 1) / (a + b + k - 1)
    return out


def shift_moments(raw: np.ndarray, shift: float) -> np.ndarray:
    """Raw moments of ``nu + shift`` from raw moments ``mu_0..mu_K`` of ``nu``."""
    K = raw.shape[0] - 1
    out = np.zeros_like(raw)
    for k in range(K + 1):
        out[k] = sum(math.comb(k, j) * shift ** (k - j) * raw[j] for j in range(k + 1))
    return out


@dataclass(frozen=True)
class TypeDistribution:
    """Distribution of the unobserved type.

    ``kind`` is ``"discrete"`` (``points``/``weights``) or ``"beta_mixture"``
    (``components`` of ``(a, b, weight)``).  ``shift`` adds a constant to the
    type, which moves the mean and keeps all central moments.
    """

    kind: str
    points: tuple = ()
    weights: tuple = ()
    components: tuple = ()
    shift: float = 0.0

    def __post_init__(self):
        if self.kind == "discrete":
            w = np.asarray(self.weights, dtype=float)
            p = np.asarray(self.points, dtype=float)
            if p.shape != w.shape or p.ndim != 1 or p.size == 0:
                raise ValueError("points and weights must be equal-length vectors")
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to one")
            if np.any(p + self.shift <= 0):
                raise ValueError("type support must be positive")
        elif self.kind == "beta_mixture":
            w = np.array([c[2] for c in self.components], dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise ValueError("mixture weights must be nonnegative and sum to one")
            if any(c[0] <= 0 or c[1] <= 0 for c in self.components):
                raise ValueError("beta parameters must be positive")
            if self.shift < 0:
                raise ValueError("a negative shift puts beta mass at or below zero")
        else:
            raise ValueError(f"unknown type distribution kind {self.kind!r}")

    @classmethod
    def discrete(cls, points, weights) -> "TypeDistribution":
        return cls("discrete", points=tuple(map(float, points)), weights=tuple(map(float, weights)))

    @classmethod
    def beta_mixture(cls, components) -> "TypeDistribution":
        return cls("beta_mixture", components=tuple(tuple(map(float, c)) for c in components))

    @classmethod
    def degenerate(cls, value: float = 1.0) -> "TypeDistribution":
        return cls.discrete([value], [1.0])

    def shifted(self, shift: float) -> "TypeDistribution":
        return replace(self, shift=self.shift + shift)

    @property
    def upper(self) -> float:
        if self.kind == "discrete":
            return max(self.points) + self.shift
        return 1.0 + self.shift

    def raw_moments(self, kmax: int) -> np.ndarray:
        """``E[nu^k]`` for ``k = 0..kmax`` computed analytically."""
        if self.kind == "discrete":
            p = np.asarray(self.points)
            w = np.asarray(self.weights)
            raw = np.array([np.dot(w, p**k) for k in range(kmax + 1)])
        else:
            raw = sum(c[2] * _beta_raw_moments(c[0], c[1], kmax) for c in self.components)
        if self.shift:
            raw = shift_moments(raw, self.shift)
        return raw

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "discrete":
            idx = rng.choice(len(self.points), size=size, p=np.asarray(self.weights))
            return np.asarray(self.points)[idx] + self.shift
        comp = rng.choice(len(self.components), size=size, p=[c[2] for c in self.components])
        a = np.array([c[0] for c in self.components])[comp]
        b = np.array([c[1] for c in self.components])[comp]
        return rng.beta(a, b) + self.shift


# ---------------------------------------------------------------------------
# Polynomials in the type
# ---------------------------------------------------------------------------


def type_polynomial(psi_prefix, which: str = "survival") -> np.ndarray:
    """Coefficients (on ``nu^0..nu^d``) of survival or exit probability at ``d``.

    ``survival`` expands ``prod_{s<=d} (1 - psi(s) nu)``; ``density`` expands
    ``psi(d) nu prod_{s<d} (1 - psi(s) nu)``, where ``d = len(psi_prefix)``.
    """
    psi = np.atleast_1d(np.asarray(psi_prefix))
    psi = psi.astype(np.result_type(psi.dtype, np.float64))  # keeps extended precision
    if which == "survival":
        return _survival_coefficients(psi)
    if which == "density":
        if psi.size == 0:
            raise ValueError("density needs at least one hazard")
        prev = _survival_coefficients(psi[:-1])
        return psi[-1] * np.concatenate((np.zeros(1, prev.dtype), prev))
    raise ValueError(f"which must be 'survival' or 'density', got {which!r}")


def _survival_coefficients(psi: np.ndarray) -> np.ndarray:
    coef = np.ones(1, dtype=psi.dtype)
    for p in psi:
        nxt = np.zeros(coef.size + 1, dtype=psi.dtype)
        nxt[:-1] += coef
        nxt[1:] -= p * coef
        coef = nxt
    return coef


def survival_table(psi_path: np.ndarray) -> np.ndarray:
    """Row ``d`` holds the coefficients of ``S(d)`` for ``d = 0..D`` (zero padded)."""
    D = psi_path.shape[0]
    out = np.zeros((D + 1, D + 1))
    out[0, 0] = 1.0
    for d in range(1, D + 1):
        out[d, :] = out[d - 1, :]
        out[d, 1:] -= psi_path[d - 1] * out[d - 1, :-1]
    return out


def expected_paths(psi_path: np.ndarray, moments: np.ndarray):
    """Exact ``E[S(d-1)]``, ``E[g(d)]`` and ``E[nu S(d-1)]`` for ``d = 1..D``.

    ``moments`` are ``mu_1..mu_D``; ``mu_0 = 1`` is implied.
    """
    D = psi_path.shape[0]
    mu = np.concatenate(([1.0], moments[:D]))
    S = survival_table(psi_path)[:D]  # S(0..D-1)
    es = S @ mu
    enu = S[:, :D] @ mu[1:]
    eg = psi_path * enu
    return es, eg, enu


def exit_rate_matrix(psi: np.ndarray, moments: np.ndarray):
    """Model hazards for stacked notices.

    ``psi`` and ``moments`` are ``(J, D)`` arrays (moments ``mu_1..mu_D`` per
    row).  Returns the ``(J, D)`` hazards and expected survivals ``E[S(d-1)]``.
    """
    J, D = psi.shape
    mu = np.concatenate((np.ones((J, 1)), moments[:, :D]), axis=1)
    coef = np.zeros((J, D + 1))
    coef[:, 0] = 1.0
    es = np.empty((J, D))
    enu = np.empty((J, D))
    for d in range(D):
        es[:, d] = (coef * mu).sum(axis=1)
        enu[:, d] = (coef[:, :D] * mu[:, 1:]).sum(axis=1)
        coef[:, 1:] = coef[:, 1:] - psi[:, d : d + 1] * coef[:, :-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return psi * enu / es, es


def model_exit_rates(params: ModelParams) -> np.ndarray:
    """Model hazards ``h(d|l)`` as a ``(J, Dbar)`` matrix.

    Raises :class:`DegenerateSurvivalError` when any expected survival is
    non-positive.
    """
    out = np.empty((params.n_notices, params.Dbar))
    for l in range(params.n_notices):
        es, eg, _ = expected_paths(params.psi_path(l), params.notice_moments(l))
        if np.any(es <= 0):
            raise DegenerateSurvivalError(f"expected survival non-positive for notice {l}")
        out[l] = eg / es
    return out


def model_exit_rate(params: ModelParams, notice: int, d: int) -> float:
    _check_duration(params, d)
    es, eg, _ = expected_paths(params.psi_path(notice)[:d], params.notice_moments(notice))
    if es[-1] <= 0:
        raise DegenerateSurvivalError(f"E[S({d - 1})] = {es[-1]:.3g} for notice {notice}")
    return float(eg[-1] / es[-1])


def average_type(params: ModelParams, notice: int, d: int) -> float:
    """Mean type among those still unemployed at the start of ``d``."""
    _check_duration(params, d)
    es, _, enu = expected_paths(params.psi_path(notice)[:d], params.notice_moments(notice))
    if es[-1] <= 0:
        raise DegenerateSurvivalError(f"E[S({d - 1})] = {es[-1]:.3g} for notice {notice}")
    return float(enu[-1] / es[-1])


def average_type_paths(params: ModelParams) -> np.ndarray:
    out = np.empty((params.n_notices, params.Dbar))
    for l in range(params.n_notices):
        es, _, enu = expected_paths(params.psi_path(l), params.notice_moments(l))
        if np.any(es <= 0):
            raise DegenerateSurvivalError(f"expected survival non-positive for notice {l}")
        out[l] = enu / es
    return out


def _check_duration(params: ModelParams, d: int):
    if not 1 <= d <= params.Dbar:
        raise ValueError(f"duration {d} outside 1..{params.Dbar}")


def hankel_diagnostic(moments, tol: float = 1e-8, warn: bool = True) -> dict:
    """Check the Stieltjes moment conditions for ``mu_1..mu_K`` (``mu_0 = 1``).

    Both ``[mu_{i+j}]`` and ``[mu_{i+j+1}]`` must be positive semidefinite for
    a distribution on the positive half line.
    """
    mu = np.concatenate(([1.0], np.asarray(moments, dtype=float)))
    K = mu.size - 1
    m0 = K // 2 + 1
    m1 = (K - 1) // 2 + 1
    H0 = np.array([[mu[i + j] for j in range(m0)] for i in range(m0)])
    H1 = np.array([[mu[i + j + 1] for j in range(m1)] for i in range(m1)])
    e0 = float(np.linalg.eigvalsh(H0).min())
    e1 = float(np.linalg.eigvalsh(H1).min())
    ok = e0 >= -tol and e1 >= -tol
    if warn and not ok:
        warnings.warn(f"moment sequence fails Hankel check (min eigenvalues {e0:.3g}, {e1:.3g})", InadmissibleWarning)
    return {"psd": ok, "min_eig_even": e0, "min_eig_odd": e1}


# ---------------------------------------------------------------------------
# Exit-rate tables
# ---------------------------------------------------------------------------


@dataclass
class ExitRateTable:
    """Per (notice, duration) numerators, denominators and hazards.

    Empirical tables hold the weighted sample averages; population tables
    hold exact probabilities.  Cells with a zero denominator are not
    estimable and their hazard is ``nan``.
    """

    numerator: np.ndarray
    denominator: np.ndarray
    notice_labels: tuple
    kind: str = "empirical"
    exits: np.ndarray | None = None
    at_risk: np.ndarray | None = None
    n: int | None = None

    def __post_init__(self):
        self.numerator = np.atleast_2d(np.asarray(self.numerator, dtype=float))
        self.denominator = np.atleast_2d(np.asarray(self.denominator, dtype=float))
        self.notice_labels = tuple(self.notice_labels)

    @property
    def Dbar(self) -> int:
        return self.numerator.shape[1]

    @property
    def n_notices(self) -> int:
        return self.numerator.shape[0]

    @property
    def estimable(self) -> np.ndarray:
        return self.denominator > 0

    @property
    def hazard(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.estimable, self.numerator / np.where(self.estimable, self.denominator, 1.0), np.nan)

    def survival_density(self):
        """``(S, g)`` per notice from the hazards: ``S[:, d]`` for ``d = 0..Dbar``
        (``S(0) = 1``) and ``g[:, d-1]`` for ``d = 1..Dbar``."""
        h = self.hazard
        S = np.ones((self.n_notices, self.Dbar + 1))
        S[:, 1:] = np.cumprod(1.0 - h, axis=1)
        g = h * S[:, :-1]
        return S, g

    @classmethod
    def from_hazards(cls, hazard, notice_labels=None, kind="population") -> "ExitRateTable":
        """Table with unit starting mass whose hazards equal ``hazard``."""
        h = np.atleast_2d(np.asarray(hazard, dtype=float))
        S = np.ones((h.shape[0], h.shape[1] + 1))
        S[:, 1:] = np.cumprod(1.0 - h, axis=1)
        labels = notice_labels or tuple(str(i) for i in range(h.shape[0]))
        return cls(numerator=h * S[:, :-1], denominator=S[:, :-1], notice_labels=labels, kind=kind)

    def rows(self):
        h = self.hazard
        for l, lab in enumerate(self.notice_labels):
            for d in range(self.Dbar):
                yield {
                    "notice": lab,
                    "d": d + 1,
                    "numerator": float(self.numerator[l, d]),
                    "denominator": float(self.denominator[l, d]),
                    "hazard": None if np.isnan(h[l, d]) else float(h[l, d]),
                    "exits": None if self.exits is None else int(self.exits[l, d]),
                    "at_risk": None if self.at_risk is None else int(self.at_risk[l, d]),
                }


def empirical_exit_rates(records, weights=None, Dbar: int = 4) -> ExitRateTable:
    """Weighted exit-rate table accounting for right censoring.

    Numerators count uncensored exits at ``d``; denominators count everyone
    whose observed duration is at least ``d``.  Both are divided by ``n``.
    """
    if Dbar < 1:
        raise ValueError("Dbar must be at least 1")
    data = as_spell_data(records)
    n = len(data)
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValueError("weights must align with records")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    J = data.n_notices
    num = np.zeros((J, Dbar))
    den = np.zeros((J, Dbar))
    exits = np.zeros((J, Dbar), dtype=np.int64)
    at_risk = np.zeros((J, Dbar), dtype=np.int64)
    dur = np.minimum(data.duration, Dbar + 1)
    exited = ~data.censored & (data.duration <= Dbar)
    for l in range(J):
        sel = data.notice == l
        w_l, d_l, e_l = weights[sel], dur[sel], exited[sel]
        # weight mass and counts by observed duration, then reverse-cumulate for "at least d"
        mass = np.bincount(d_l, weights=w_l, minlength=Dbar + 2)[1 : Dbar + 2]
        cnt = np.bincount(d_l, minlength=Dbar + 2)[1 : Dbar + 2]
        den[l] = np.cumsum(mass[::-1])[::-1][:Dbar]
        at_risk[l] = np.cumsum(cnt[::-1])[::-1][:Dbar]
        num[l] = np.bincount(d_l[e_l], weights=w_l[e_l], minlength=Dbar + 1)[1 : Dbar + 1]
        exits[l] = np.bincount(d_l[e_l], minlength=Dbar + 1)[1 : Dbar + 1]
    if n:
        num /= n
        den /= n
    table = ExitRateTable(num, den, data.notice_labels, "empirical", exits=exits, at_risk=at_risk, n=n)
    if not table.estimable.all():
        empty = [(data.notice_labels[l], d + 1) for l, d in zip(*np.nonzero(~table.estimable))]
        warnings.warn(f"cells without survivors are not estimable: {empty}", RuntimeWarning)
    return table
