"""Data-generating processes, exact population tables and Monte Carlo tools.

Random numbers come from a counter-based generator (Philox) keyed by
``(seed, replication)``.  Each simulated individual owns one row of a
fixed-width block of uniforms, so its draws depend only on
``(seed, replication, index)`` and never on how work is scheduled.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from mixhazard.core import (
    ExitRateTable,
    LogLogistic,
    ModelParams,
    SpellData,
    TypeDistribution,
    as_spell_data,
    average_type_paths,
    expected_paths,
)

# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def uniform_block(seed: int, replication: int, n: int, width: int, salt: int = 0) -> np.ndarray:
    """``(n, width)`` uniforms; row ``i`` sits at a fixed counter offset."""
    return stream(seed, replication, salt).random((n, width))


# ---------------------------------------------------------------------------
# DGP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dgp:
    """Two or more notice groups sharing (up to ``gamma``) a later structural hazard.

    ``tail`` gives ``psi(2..Dbar)`` (or a :class:`LogLogistic`).  ``gamma``
    rows multiply the tail per notice and ``type_shift`` adds a constant to
    the type of each notice group.  An optional binary covariate ``x``
    (probability ``x_prob``) moves notice assignment through the logit
    coefficients ``assignment`` (one ``(intercept, slope)`` per non-reference
    notice) and multiplies the hazard by ``x_effect`` when ``x = 1``.
    """

    psi1: tuple
    tail: tuple | LogLogistic
    types: TypeDistribution
    Dbar: int
    shares: tuple | None = None
    notice_labels: tuple | None = None
    gamma: tuple | None = None
    type_shift: tuple | None = None
    x_prob: float | None = None
    x_effect: float = 1.0
    assignment: tuple | None = None
    censoring: str = "none"

    def __post_init__(self):
        J = len(self.psi1)
        if J < 2:
            raise ValueError("a DGP needs at least two notice groups")
        if self.notice_labels is None:
            labels = ("S", "L") if J == 2 else tuple(f"n{j}" for j in range(J))
            object.__setattr__(self, "notice_labels", labels)
        if self.assignment is None:
            shares = self.shares if self.shares is not None else (1.0 / J,) * J
            if len(shares) != J or abs(sum(shares) - 1) > 1e-12 or min(shares) <= 0:
                raise ValueError("shares must be positive and sum to one")
            object.__setattr__(self, "shares", tuple(map(float, shares)))
        elif len(self.assignment) != J - 1 or self.x_prob is None:
            raise ValueError("assignment needs J-1 (intercept, slope) pairs and x_prob")
        if not isinstance(self.tail, LogLogistic) and len(self.tail) != self.Dbar - 1:
            raise ValueError(f"tail needs Dbar-1={self.Dbar - 1} values")
        if self.x_effect <= 0:
            raise ValueError("x_effect must be positive")
        parse_censoring(self.censoring)

    @property
    def n_notices(self) -> int:
        return len(self.psi1)

    def tail_path(self) -> np.ndarray:
        if isinstance(self.tail, LogLogistic):
            return self.tail.path(self.Dbar)
        return np.asarray(self.tail, dtype=float)

    def psi_matrix(self) -> np.ndarray:
        """Structural hazards ``psi_l(1..Dbar)`` in the DGP's own type units."""
        tail = self.tail_path()
        out = np.empty((self.n_notices, self.Dbar))
        for l in range(self.n_notices):
            g = 1.0 if self.gamma is None else np.asarray(self.gamma[l], dtype=float)
            out[l] = np.concatenate(([self.psi1[l]], tail * g))
        return out

    def _shift(self, l: int) -> float:
        return 0.0 if self.type_shift is None else float(self.type_shift[l])

    def type_moments(self, l: int, kmax: int) -> np.ndarray:
        """Raw moments ``E[theta^k]``, ``k = 0..kmax``, of ``theta = phi(x) * nu`` for notice ``l``.

        ``x`` is independent of the type; under inverse-propensity weighting the
        relevant ``x`` distribution is the population one.
        """
        nu = self.types.shifted(self._shift(l)).raw_moments(kmax)
        if self.x_prob is None:
            return nu
        k = np.arange(kmax + 1)
        phi = (1 - self.x_prob) + self.x_prob * self.x_effect**k
        return nu * phi

    def true_params(self) -> ModelParams:
        """Parameters in estimation units (mean type of the first notice equal to one)."""
        D = self.Dbar
        ref = self.type_moments(0, D)
        c = ref[1]
        k = np.arange(1, D + 1)
        psi = self.psi_matrix() * c
        mu = ref[1:] / c**k
        kappa = None
        if self.type_shift is not None and any(self.type_shift):
            kappa = np.vstack([self.type_moments(l, D)[1:] / c**k - mu for l in range(self.n_notices)])
        gamma = None
        if self.gamma is not None:
            gamma = np.vstack([np.broadcast_to(np.asarray(g, dtype=float), (D - 1,)) for g in self.gamma])
        if isinstance(self.tail, LogLogistic):
            if abs(c - 1.0) > 1e-14:
                raise ValueError("log-logistic DGPs must have a unit mean type to be expressed in estimation units")
            tail = self.tail
        else:
            tail = psi[0, 1:] if gamma is None else self.tail_path() * c
        return ModelParams(psi1=psi[:, 0], tail=tail, moments=mu, notice_labels=self.notice_labels,
                           gamma=gamma, kappa=kappa)

    def notice_probabilities(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.assignment is None:
            return np.broadcast_to(np.asarray(self.shares), (n, self.n_notices))
        eta = np.column_stack([np.zeros(n)] + [a + b * x for a, b in self.assignment])
        eta -= eta.max(axis=1, keepdims=True)
        p = np.exp(eta)
        return p / p.sum(axis=1, keepdims=True)

    def population_shares(self) -> np.ndarray:
        if self.assignment is None:
            return np.asarray(self.shares)
        p = self.notice_probabilities(np.array([0.0, 1.0]))
        return (1 - self.x_prob) * p[0] + self.x_prob * p[1]


def three_point_dgp() -> Dgp:
    """Reference DGP: three-point type, first-period hazards 0.1 and 0.2."""
    return Dgp(psi1=(0.1, 0.2), tail=(0.15, 0.25, 0.2),
               types=TypeDistribution.discrete([0.4, 1.0, 1.6], [0.25, 0.5, 0.25]), Dbar=4)


_BETA_MIX = ((0.1, 0.1, 0.5), (0.3, 0.5, 0.1), (0.25, 0.5, 0.4))


def binning_tail(case: int, Dbar: int = 12, form: str = "geometric") -> np.ndarray:
    """Later-period hazards ``psi(2..Dbar)`` for the four binning cases.

    ``form="geometric"`` (default) uses ``b k^(d-1)``; ``form="weibull"``
    uses ``b k d^(k-1)``.  Both are constant at ``b`` when ``k = 1``.  The
    geometric case 1 exceeds one from ``d = 10`` on, so high types get
    exit probabilities above one there (a warning is issued).
    """
    params = {1: (0.2, 1.2), 2: (0.2, 0.75), 3: (0.15, 1.0)}
    if form not in ("weibull", "geometric"):
        raise ValueError("form must be 'weibull' or 'geometric'")

    def f(b, k, d):
        return b * k * d ** (k - 1) if form == "weibull" else b * k ** (d - 1)

    d = np.arange(2, Dbar + 1, dtype=float)
    if case in params:
        return f(*params[case], d)
    if case == 4:
        return np.where(d <= 7, f(*params[1], d), 1.75 * f(*params[2], d))
    raise ValueError(f"binning case must be 1, 2, 3 or 4, got {case!r}")


def make_binning_dgp(case: int, form: str = "geometric", Dbar: int = 12) -> Dgp:
    """Two equal-share notice groups (first-period hazards 0.1, 0.2), Beta-mixture type."""
    tail = binning_tail(case, Dbar, form)
    types = TypeDistribution.beta_mixture(_BETA_MIX)
    if np.any(tail * types.upper >= 1):
        warnings.warn(f"case {case} ({form}) has hazards reaching {tail.max():.3f}; exit probabilities exceed one "
                      "for high types", RuntimeWarning)
    return Dgp(psi1=(0.1, 0.2), tail=tuple(tail), types=types, Dbar=Dbar, shares=(0.5, 0.5))


# ---------------------------------------------------------------------------
# Exact population tables
# ---------------------------------------------------------------------------


def parse_censoring(scheme: str):
    """``"none"``, ``"uniform"`` or ``"fixed:<h>"`` -> ``(kind, horizon)``."""
    if scheme in ("none", "uniform"):
        return scheme, None
    if isinstance(scheme, str) and scheme.startswith("fixed:"):
        h = int(scheme.split(":", 1)[1])
        if h < 1:
            raise ValueError("fixed censoring horizon must be >= 1")
        return "fixed", h
    raise ValueError(f"unknown censoring scheme {scheme!r}")


def censor_survival(scheme: str, Dbar: int) -> np.ndarray:
    """``Pr(D^c >= d)`` for ``d = 1..Dbar``."""
    kind, h = parse_censoring(scheme)
    d = np.arange(1, Dbar + 1)
    if kind == "none":
        return np.ones(Dbar)
    if kind == "uniform":
        return (Dbar + 2 - d) / (Dbar + 1)
    return (d <= h).astype(float)


def exact_exit_rates(dgp: Dgp, Dbar: int | None = None) -> ExitRateTable:
    """Population (inverse-propensity weighted) exit-rate table, no sampling error.

    Each notice row is the distribution everyone would face under that
    notice.  Censoring multiplies numerator and denominator at ``d`` by
    ``Pr(D^c >= d)`` and leaves hazards unchanged.
    """
    Dbar = Dbar or dgp.Dbar
    if Dbar > dgp.Dbar:
        raise ValueError("Dbar exceeds the DGP horizon")
    psi = dgp.psi_matrix()[:, :Dbar]
    cs = censor_survival(dgp.censoring, Dbar)
    num = np.empty((dgp.n_notices, Dbar))
    den = np.empty((dgp.n_notices, Dbar))
    for l in range(dgp.n_notices):
        mom = dgp.type_moments(l, Dbar)[1:]
        es, eg, _ = expected_paths(psi[l], mom)
        num[l] = eg * cs
        den[l] = es * cs
    return ExitRateTable(num, den, dgp.notice_labels, "population")


def exact_average_types(dgp: Dgp) -> np.ndarray:
    """``E[theta | D >= d, l] / E[theta]`` per notice, ``d = 1..Dbar``."""
    return average_type_paths(dgp.true_params())


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


@dataclass
class BinnedRates:
    table: ExitRateTable
    cumulative_hazard: np.ndarray  # (J, B) at the mean type, estimation units
    average_type: np.ndarray  # (J, B) at the start of each interval
    bin_size: int


def bin_exit_rates(dgp: Dgp, bin_size: int) -> BinnedRates:
    """Exit rates over intervals of ``bin_size`` periods.

    The interval hazard is ``1 - S(kb) / S((k-1)b)``.  The cumulative
    structural hazard for a worker of mean type ``mu`` is
    ``1 - prod_{d in I} (1 - psi(d) mu)``, expressed with the mean type of the
    first notice set to one (the estimation normalisation).
    """
    if bin_size not in (1, 2, 3, 4) and bin_size < 1:
        raise ValueError("bin_size must be a positive integer")
    D = dgp.Dbar
    if D % bin_size:
        raise ValueError(f"Dbar={D} is not divisible by bin_size={bin_size}")
    B = D // bin_size
    base = exact_exit_rates(dgp)
    S, _ = base.survival_density()
    edges = np.arange(0, D + 1, bin_size)
    start = S[:, edges[:-1]]
    end = S[:, edges[1:]]
    table = ExitRateTable(start - end, start, dgp.notice_labels, "population")
    truth = dgp.true_params()
    psi = truth.psi_matrix()
    cum = np.empty((dgp.n_notices, B))
    for l in range(dgp.n_notices):
        mu = truth.notice_moments(l)[0]
        blocks = (1.0 - psi[l] * mu).reshape(B, bin_size)
        cum[l] = 1.0 - blocks.prod(axis=1)
    avg = average_type_paths(truth)[:, edges[:-1]]
    return BinnedRates(table=table, cumulative_hazard=cum, average_type=avg, bin_size=bin_size)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _sample_types(types: TypeDistribution, u_comp: np.ndarray, u_val: np.ndarray) -> np.ndarray:
    if types.kind == "discrete":
        cdf = np.cumsum(types.weights)
        idx = np.minimum(np.searchsorted(cdf, u_comp, side="right"), len(types.points) - 1)
        return np.asarray(types.points)[idx] + types.shift
    w = np.array([c[2] for c in types.components])
    comp = np.minimum(np.searchsorted(np.cumsum(w), u_comp, side="right"), len(w) - 1)
    out = np.empty(u_comp.shape[0])
    for j, (a, b, _) in enumerate(types.components):
        sel = comp == j
        out[sel] = stats.beta.ppf(u_val[sel], a, b)
    return out + types.shift


def censor_durations(duration, censored, u_censor: np.ndarray, scheme: str, Dbar: int):
    """Apply independent censoring draws to (duration, censored) arrays."""
    kind, h = parse_censoring(scheme)
    duration = np.asarray(duration).copy()
    censored = np.asarray(censored, dtype=bool).copy()
    if kind == "none":
        return duration, censored
    if kind == "uniform":
        dc = np.minimum((u_censor * (Dbar + 1)).astype(np.int64) + 1, Dbar + 1)
    else:
        dc = np.full(duration.shape[0], h, dtype=np.int64)
    hit = dc < duration
    duration[hit] = dc[hit]
    censored[hit] = True
    return duration, censored


def simulate(dgp: Dgp, n: int, seed: int, replication: int = 0) -> SpellData:
    """Draw ``n`` spells; durations past ``Dbar`` are censored at ``Dbar + 1``."""
    if n < 1:
        raise ValueError("n must be positive")
    D = dgp.Dbar
    U = uniform_block(seed, replication, n, 5 + D)
    u_x, u_notice, u_comp, u_val, u_cens = U[:, 0], U[:, 1], U[:, 2], U[:, 3], U[:, 4]
    u_exit = U[:, 5:]
    x = (u_x < dgp.x_prob).astype(float) if dgp.x_prob is not None else np.zeros(n)
    P = dgp.notice_probabilities(x)
    notice = np.minimum((u_notice[:, None] > np.cumsum(P, axis=1)).sum(axis=1), dgp.n_notices - 1)
    nu = _sample_types(dgp.types, u_comp, u_val)
    if dgp.type_shift is not None:
        nu = nu + np.asarray(dgp.type_shift, dtype=float)[notice]
    theta = nu * np.where(x > 0, dgp.x_effect, 1.0)
    haz = dgp.psi_matrix()[notice] * theta[:, None]
    if np.any(haz > 1):
        warnings.warn("individual exit probabilities above one were capped at one", RuntimeWarning)
    exits = u_exit < haz
    first = np.where(exits.any(axis=1), exits.argmax(axis=1) + 1, D + 1)
    censored = first > D
    duration, censored = censor_durations(first, censored, u_cens, dgp.censoring, D)
    cov = x[:, None] if dgp.x_prob is not None else None
    names = ("x",) if dgp.x_prob is not None else ()
    return SpellData(notice=notice, duration=duration, censored=censored, notice_labels=dgp.notice_labels,
                     covariates=cov, covariate_names=names)


def apply_censoring(records, scheme: str, seed: int, Dbar: int):
    """Censor spells at an independent ``D^c``; ``"none"`` returns the input unchanged.

    ``scheme`` is ``"uniform"`` (``D^c`` uniform on ``1..Dbar+1``),
    ``"fixed:<h>"`` or ``"none"``.
    """
    kind, _ = parse_censoring(scheme)
    if kind == "none":
        return records
    data = as_spell_data(records)
    u = uniform_block(seed, 0, len(data), 1, salt=1)[:, 0]
    dur, cen = censor_durations(data.duration, data.censored, u, scheme, Dbar)
    out = replace(data, duration=dur, censored=cen)
    return out if isinstance(records, SpellData) else out.to_records()


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class McSummary:
    """Per-replication rows and per-parameter summaries.

    Coverage uses the symmetric 90% interval ``estimate +/- 1.645 se``.
    """

    names: list
    truth: dict
    rows: list
    base_seed: int
    n: int
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.summary:
            self.summary = self.recompute()

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if not r["converged"])

    def recompute(self) -> dict:
        ok = [r for r in self.rows if r["converged"]]
        out = {}
        z = stats.norm.ppf(0.95)
        for nm in self.names:
            est = np.array([r["estimates"][nm] for r in ok], dtype=float)
            se = np.array([np.nan if r["se"].get(nm) is None else r["se"][nm] for r in ok], dtype=float)
            if est.size == 0:
                continue
            entry = {"mean": float(est.mean()), "sd": float(est.std(ddof=1)) if est.size > 1 else 0.0}
            entry["mc_se"] = entry["sd"] / math.sqrt(est.size)
            entry["skewness"] = float(stats.skew(est)) if est.size > 2 else None
            t = self.truth.get(nm)
            if t is not None:
                entry["truth"] = float(t)
                entry["bias"] = entry["mean"] - float(t)
                good = np.isfinite(se)
                entry["coverage90"] = float(np.mean(np.abs(est[good] - t) <= z * se[good])) if good.any() else None
            out[nm] = entry
        js = [r["j_pvalue"] for r in ok if r.get("j_pvalue") is not None]
        if js:
            out["_j_rejection_10"] = float(np.mean(np.array(js) < 0.10))
        out["_replications"] = len(self.rows)
        out["_failed"] = self.n_failed
        return out

    def to_dict(self) -> dict:
        return {"names": self.names, "truth": self.truth, "base_seed": self.base_seed, "n": self.n,
                "summary": self.summary, "replications": self.rows}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            cols = ["replication", "seed", "converged", "j_stat", "j_pvalue", "error"]
            cols += [f"est_{nm}" for nm in self.names] + [f"se_{nm}" for nm in self.names]
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                row = {k: r.get(k) for k in cols[:6]}
                for nm in self.names:
                    row[f"est_{nm}"] = r["estimates"].get(nm)
                    row[f"se_{nm}"] = r["se"].get(nm)
                w.writerow(row)


def result_parameters(res) -> tuple[dict, dict]:
    """Structural hazards and moments with standard errors from a ``GmmResult``."""
    est, se = {}, {}
    for row in res.implied_hazards:
        nm = f"psi{row['d']}" if row["notice"] is None else f"psi{row['d']}[{row['notice']}]"
        est[nm] = row["psi"]
        se[nm] = row["se"]
    rse = res.se
    for i, nm in enumerate(res.param_names):
        if nm.startswith("mu") or nm.startswith("alpha"):
            est[nm] = float(res.estimates[i])
            se[nm] = None if rse is None else float(rse[i])
    return est, se


def truth_parameters(params: ModelParams) -> dict:
    """Reference values keyed like :func:`result_parameters`."""
    out = {}
    psi = params.psi_matrix()
    for l, lab in enumerate(params.notice_labels):
        out[f"psi1[{lab}]"] = float(psi[l, 0])
    per_notice = params.gamma is not None
    for d in range(2, params.Dbar + 1):
        if per_notice:
            for l, lab in enumerate(params.notice_labels):
                out[f"psi{d}[{lab}]"] = float(psi[l, d - 1])
        else:
            out[f"psi{d}"] = float(psi[0, d - 1])
    for k in range(2, params.Dbar + 1):
        out[f"mu{k}"] = float(params.moments[k - 1])
    if params.is_parametric:
        out["alpha1"] = params.tail.alpha1
        out["alpha2"] = params.tail.alpha2
    return out


def monte_carlo(task: Callable, R: int, n: int, base_seed: int, truth: dict | None = None,
                threads: int = 1) -> McSummary:
    """Run ``task(n, seed, replication)`` for ``replication = 0..R-1``.

    ``task`` returns a ``GmmResult``; failures are recorded and excluded.
    Replication ``r`` draws from the stream keyed by ``(base_seed, r)`` so the
    summary is identical for any ``threads``.
    """
    if R < 1:
        raise ValueError("R must be at least 1")

    def run(r):
        row = {"replication": r, "seed": base_seed, "converged": False, "estimates": {}, "se": {},
               "j_stat": None, "j_pvalue": None, "error": None}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = task(n, base_seed, r)
            est, se = result_parameters(res)
            row.update(estimates=est, se=se, converged=bool(res.converged), j_stat=res.j_stat, j_pvalue=res.j_pvalue)
        except Exception as exc:  # noqa: BLE001 - any failure is a recorded replication outcome
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, range(R)))
    else:
        rows = [run(r) for r in range(R)]
    names = []
    for r in rows:
        for k in r["estimates"]:
            if k not in names:
                names.append(k)
    return McSummary(names=names, truth=dict(truth or {}), rows=rows, base_seed=base_seed, n=n)


def dgp_task(dgp: Dgp, spec, covariates=None):
    """Pipeline ``simulate -> (propensity fit) -> gmm_estimate`` for :func:`monte_carlo`."""
    from mixhazard.estimator import gmm_estimate
    from mixhazard.propensity import fit_propensity

    def task(n, seed, r):
        data = simulate(dgp, n, seed, r)
        model = fit_propensity(data, covariates) if covariates is not None else None
        return gmm_estimate(data, model, spec)

    return task
