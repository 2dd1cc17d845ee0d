"""Non-stationary job search with heterogeneous workers.

A worker of type ``nu`` at duration ``d`` chooses effort ``s``; the job
finding probability is ``delta(d) * nu * s`` and effort costs
``theta * s^(1+rho) / (1+rho)``.  Benefits ``b`` are paid through period
``D_B``; an annuity ``a`` is received in every state.  From ``D_T + 1`` on the
environment is stationary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from mixhazard.core import ExitRateTable, SpellData
from mixhazard.simlab import uniform_block


class SearchConvergenceError(RuntimeError):
    """The stationary value iteration did not converge."""


@dataclass(frozen=True)
class SearchConfig:
    """Preferences, income, search technology and worker types.

    ``delta`` lists ``delta(1..D_T)``; ``delta_T`` (default ``delta(D_T)``)
    applies afterwards.  ``types`` holds ``(nu, share)`` pairs.
    """

    beta: float = 0.985
    sigma: float = 1.75
    wage: float = 1.0
    annuity: float = 0.1
    benefit: float = 0.5
    D_B: int = 3
    D_T: int = 4
    rho: float = 1.0
    theta: float = 50.0
    delta: tuple = (1.0, 1.0, 1.0, 1.0)
    delta_T: float | None = None
    types: tuple = ((1.0, 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(map(float, self.delta)))
        object.__setattr__(self, "types", tuple((float(v), float(p)) for v, p in self.types))
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.theta <= 0 or self.rho <= 0:
            raise ValueError("theta and rho must be positive")
        if self.D_T < self.D_B or self.D_B < 0:
            raise ValueError("need 0 <= D_B <= D_T")
        if len(self.delta) != self.D_T:
            raise ValueError(f"delta needs D_T={self.D_T} entries")
        if min(self.delta) <= 0 or (self.delta_T is not None and self.delta_T <= 0):
            raise ValueError("offer arrival rates must be positive")
        shares = np.array([p for _, p in self.types])
        if np.any(shares < 0) or abs(shares.sum() - 1) > 1e-12:
            raise ValueError("type shares must be nonnegative and sum to one")
        if any(v <= 0 for v, _ in self.types):
            raise ValueError("types must be positive")
        if self.wage + self.annuity <= 0 or self.annuity <= 0 and self.sigma >= 1:
            raise ValueError("consumption must stay positive in every state")

    @property
    def tail_delta(self) -> float:
        return self.delta[-1] if self.delta_T is None else float(self.delta_T)

    def delta_path(self, horizon: int) -> np.ndarray:
        """``delta(1..horizon)``, stationary past ``D_T``."""
        out = np.full(horizon, self.tail_delta)
        k = min(horizon, self.D_T)
        out[:k] = self.delta[:k]
        return out

    def utility(self, c):
        c = np.asarray(c, dtype=float)
        if self.sigma == 1:
            return np.log(c)
        return c ** (1 - self.sigma) / (1 - self.sigma)

    def cost(self, s):
        return self.theta * np.asarray(s, dtype=float) ** (1 + self.rho) / (1 + self.rho)

    def marginal_cost(self, s):
        return self.theta * np.asarray(s, dtype=float) ** self.rho


@dataclass
class SearchSolution:
    """Values, effort and hazards for ``d = 1..D_T + 1`` (the last column is stationary)."""

    config: SearchConfig
    V_e: float
    V_u: np.ndarray  # (types, D_T + 1)
    effort: np.ndarray
    hazard: np.ndarray
    clamped: np.ndarray
    stationary_iterations: np.ndarray
    notes: list = field(default_factory=list)

    @property
    def nu(self) -> np.ndarray:
        return np.array([v for v, _ in self.config.types])

    @property
    def shares(self) -> np.ndarray:
        return np.array([p for _, p in self.config.types])

    def _extend(self, arr, horizon):
        T = self.config.D_T
        if horizon <= T + 1:
            return arr[:, :horizon]
        extra = np.repeat(arr[:, -1:], horizon - T - 1, axis=1)
        return np.concatenate((arr, extra), axis=1)

    def hazard_path(self, horizon: int) -> np.ndarray:
        return self._extend(self.hazard, horizon)

    def effort_path(self, horizon: int) -> np.ndarray:
        return self._extend(self.effort, horizon)

    def value_path(self, horizon: int) -> np.ndarray:
        return self._extend(self.V_u, horizon)

    def bellman_residuals(self) -> np.ndarray:
        """``V_u(d) - [u - c(s) + beta (lambda V_e + (1 - lambda) V_u(d+1))]`` at the solved effort."""
        cfg = self.config
        T = cfg.D_T
        delta = cfg.delta_path(T + 1)
        out = np.zeros_like(self.V_u)
        for j, nu in enumerate(self.nu):
            for d in range(1, T + 2):
                nxt = self.V_u[j, min(d, T)]  # V_u(d+1); stationary column repeats
                inc = cfg.benefit + cfg.annuity if d <= cfg.D_B else cfg.annuity
                lam = delta[d - 1] * nu * self.effort[j, d - 1]
                rhs = cfg.utility(inc) - cfg.cost(self.effort[j, d - 1]) + cfg.beta * (lam * self.V_e + (1 - lam) * nxt)
                out[j, d - 1] = self.V_u[j, d - 1] - rhs
        return out

    def foc_residuals(self) -> np.ndarray:
        """``c'(s) - beta delta nu (V_e - V_u(d+1))`` at unclamped interior points (``nan`` elsewhere)."""
        cfg = self.config
        T = cfg.D_T
        delta = cfg.delta_path(T + 1)
        out = np.full_like(self.V_u, np.nan)
        for j, nu in enumerate(self.nu):
            for d in range(1, T + 2):
                nxt = self.V_u[j, min(d, T)]
                gain = cfg.beta * delta[d - 1] * nu * (self.V_e - nxt)
                if not self.clamped[j, d - 1] and gain > 0:
                    out[j, d - 1] = cfg.marginal_cost(self.effort[j, d - 1]) - gain
        return out


def _optimal_effort(cfg: SearchConfig, delta: float, nu: float, surplus: float):
    """Interior effort from the first-order condition, clamped to ``[0, 1/(delta nu)]``."""
    if surplus <= 0:
        return 0.0, False
    s = (cfg.beta * delta * nu * surplus / cfg.theta) ** (1.0 / cfg.rho)
    cap = 1.0 / (delta * nu)
    if s > cap:
        return cap, True
    return s, False


def _stationary_value(cfg: SearchConfig, nu: float, V_e: float, tol: float = 1e-12, max_iter: int = 10_000):
    """Damped fixed-point iteration (weight 0.5) for the stationary unemployment value."""
    u = float(cfg.utility(cfg.annuity))
    dT = cfg.tail_delta
    V = u / (1 - cfg.beta)
    for it in range(1, max_iter + 1):
        s, _ = _optimal_effort(cfg, dT, nu, V_e - V)
        lam = dT * nu * s
        TV = u - float(cfg.cost(s)) + cfg.beta * (lam * V_e + (1 - lam) * V)
        new = 0.5 * V + 0.5 * TV
        if abs(new - V) < tol:
            return new, it
        V = new
    raise SearchConvergenceError(f"stationary value for nu={nu} did not converge in {max_iter} iterations")


def solve(config: SearchConfig) -> SearchSolution:
    """Stationary tail by value iteration, then backward induction over ``d = D_T..1``."""
    cfg = config
    T = cfg.D_T
    V_e = float(cfg.utility(cfg.wage + cfg.annuity)) / (1 - cfg.beta)
    K = len(cfg.types)
    V = np.zeros((K, T + 1))
    S = np.zeros((K, T + 1))
    H = np.zeros((K, T + 1))
    C = np.zeros((K, T + 1), dtype=bool)
    iters = np.zeros(K, dtype=int)
    notes = []
    delta = cfg.delta_path(T + 1)
    for j, (nu, _) in enumerate(cfg.types):
        Vs, iters[j] = _stationary_value(cfg, nu, V_e)
        # the stationary column: effort and value consistent with the fixed point
        s, clamp = _optimal_effort(cfg, delta[T], nu, V_e - Vs)
        V[j, T] = (float(cfg.utility(cfg.annuity)) - float(cfg.cost(s)) + cfg.beta * delta[T] * nu * s * V_e) / (
            1 - cfg.beta * (1 - delta[T] * nu * s))
        S[j, T], C[j, T] = s, clamp
        if V_e <= V[j, T]:
            msg = f"employment is not preferred to unemployment for nu={nu}; effort set to zero"
            warnings.warn(msg, RuntimeWarning)
            notes.append(msg)
        for d in range(T, 0, -1):
            nxt = V[j, d]
            inc = cfg.benefit + cfg.annuity if d <= cfg.D_B else cfg.annuity
            s, clamp = _optimal_effort(cfg, delta[d - 1], nu, V_e - nxt)
            if V_e <= nxt:
                msg = f"no surplus from employment at d={d} for nu={nu}; effort set to zero"
                warnings.warn(msg, RuntimeWarning)
                notes.append(msg)
            lam = delta[d - 1] * nu * s
            V[j, d - 1] = float(cfg.utility(inc)) - float(cfg.cost(s)) + cfg.beta * (lam * V_e + (1 - lam) * nxt)
            S[j, d - 1], C[j, d - 1] = s, clamp
        H[j] = np.minimum(delta * nu * S[j], 1.0)
    return SearchSolution(config=cfg, V_e=V_e, V_u=V, effort=S, hazard=H, clamped=C,
                          stationary_iterations=iters, notes=notes)


def implied_hazards(solution, types=None, Dbar: int | None = None) -> dict:
    """Structural, observed and average-type paths.

    ``solution`` is a :class:`SearchSolution` or a ``(types, Dbar)`` array of
    per-type hazards with ``types`` as ``(nu, share)`` pairs.  The structural
    path is ``E[h(d|nu)]``; the observed path reweights types by survival.
    """
    if isinstance(solution, SearchSolution):
        Dbar = Dbar or solution.config.D_T
        H = solution.hazard_path(Dbar)
        nu, pi = solution.nu, solution.shares
    else:
        H = np.atleast_2d(np.asarray(solution, dtype=float))
        if types is None:
            raise ValueError("types are required with a raw hazard matrix")
        nu = np.array([v for v, _ in types])
        pi = np.array([p for _, p in types])
        Dbar = Dbar or H.shape[1]
        H = H[:, :Dbar]
    surv = np.ones_like(H)
    surv[:, 1:] = np.cumprod(1 - H[:, :-1], axis=1)
    mass = pi[:, None] * surv
    tot = mass.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        observed = (mass * H).sum(axis=0) / tot
        avg = (mass * nu[:, None]).sum(axis=0) / tot
    return {"structural": pi @ H, "observed": observed, "average_type": avg, "survival": tot}


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass
class CalibrationResult:
    config: SearchConfig
    mode: str
    residuals: dict
    residual_norm: float
    success: bool
    tolerance: float
    paths: dict
    evaluations: int

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "mode": self.mode,
            "success": self.success,
            "residual_norm": self.residual_norm,
            "tolerance": self.tolerance,
            "delta": list(cfg.delta),
            "types": [list(t) for t in cfg.types],
            "residuals": {k: list(map(float, v)) for k, v in self.residuals.items()},
            "paths": {k: list(map(float, v)) for k, v in self.paths.items()},
            "evaluations": self.evaluations,
        }


def _config_from(template: SearchConfig, z: np.ndarray, mode: str) -> SearchConfig:
    T = template.D_T
    delta = (template.delta[0],) + tuple(np.exp(z[: T - 1]))
    if mode == "single-type":
        types = ((float(np.exp(z[T - 1])), 1.0),)
    else:
        nu_l = 1 / (1 + np.exp(-z[T - 1]))
        pi = 1 / (1 + np.exp(-z[T]))
        types = ((1.0, float(pi)), (float(nu_l), float(1 - pi)))
    return replace(template, delta=delta, types=types, delta_T=None)


def calibrate(template: SearchConfig, targets: dict, mode: str = "two-type", weights: dict | None = None,
              tol: float = 1e-6, restarts: int = 5, seed: int = 0) -> CalibrationResult:
    """Fit offer arrival rates (and types) to structural and/or observed exit paths.

    ``single-type`` frees ``delta(2..D_T)`` and the type level; ``two-type``
    frees ``delta(2..D_T)``, ``nu_L`` (with ``nu_H = 1``) and the high-type
    share.  ``delta(1)`` stays at its template value.  The loss is the
    weighted sum of squared deviations; a simplex search from ``restarts``
    jittered starts is polished by least squares.
    """
    if mode not in ("single-type", "two-type"):
        raise ValueError("mode must be 'single-type' or 'two-type'")
    T = template.D_T
    targets = {k: np.asarray(v, dtype=float) for k, v in targets.items() if v is not None}
    if not targets or set(targets) - {"structural", "observed"}:
        raise ValueError("targets must contain 'structural' and/or 'observed'")
    for k, v in targets.items():
        if v.shape != (T,):
            raise ValueError(f"target path {k!r} must have length D_T={T}, got {v.shape[0]}")
    weights = weights or {}
    wts = {k: float(weights.get(k, 1.0)) for k in targets}
    n_free = T if mode == "single-type" else T + 1
    n_targets = sum(v.size for v in targets.values())
    if n_targets < n_free:
        raise ValueError(f"{n_targets} targets cannot pin down {n_free} parameters")
    count = [0]

    def resid(z):
        count[0] += 1
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = solve(_config_from(template, z, mode))
        except (SearchConvergenceError, ValueError, FloatingPointError):
            return np.full(n_targets, 1e3)
        paths = implied_hazards(sol, Dbar=T)
        return np.concatenate([np.sqrt(wts[k]) * (paths[k] - targets[k]) for k in sorted(targets)])

    def loss(z):
        r = resid(z)
        return float(r @ r)

    # start: rescale the template's own hazards onto the first target path
    first = next(iter(targets.values()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = implied_hazards(solve(replace(template, types=((1.0, 1.0),))), Dbar=T)["structural"]
    level = np.clip(first[0] / base[0], 1e-3, 1e3)
    ratio = np.clip(first / np.maximum(base, 1e-12) / level, 1e-3, 1e3)
    z0 = np.zeros(n_free)
    z0[: T - 1] = np.log(ratio[1:] * np.asarray(template.delta[1:]))
    z0[T - 1] = np.log(level) if mode == "single-type" else 0.0
    rng = np.random.default_rng(seed)
    best = None
    for k in range(restarts):
        start = z0 + (rng.normal(scale=0.3, size=n_free) if k else 0.0)
        nm = optimize.minimize(loss, start, method="Nelder-Mead",
                               options={"maxfev": 300 * n_free, "xatol": 1e-10, "fatol": 1e-28, "adaptive": True})
        ls = optimize.least_squares(resid, nm.x, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * n_free)
        cand = (loss(ls.x), ls.x) if loss(ls.x) <= nm.fun else (nm.fun, nm.x)
        if best is None or cand[0] < best[0]:
            best = cand
        if best[0] < 1e-24:
            break
    cfg = _config_from(template, best[1], mode)
    sol = solve(cfg)
    paths = implied_hazards(sol, Dbar=T)
    res = {k: paths[k] - targets[k] for k in targets}
    norm = float(np.sqrt(sum(float(v @ v) for v in res.values())))
    out_paths = {"structural": paths["structural"], "observed": paths["observed"],
                 "average_type": paths["average_type"], "delta": np.asarray(cfg.delta),
                 "average_effort": sol.shares @ sol.effort_path(T)}
    result = CalibrationResult(config=cfg, mode=mode, residuals=res, residual_norm=norm, success=norm <= tol,
                               tolerance=tol, paths=out_paths, evaluations=count[0])
    if not result.success:
        warnings.warn(f"calibration residual norm {norm:.3e} exceeds tolerance {tol:.1e}", RuntimeWarning)
    return result


# ---------------------------------------------------------------------------
# Notice panels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoticeSpec:
    """First-period arrival rate and population share for each notice label."""

    labels: tuple = ("S", "L")
    delta1: tuple = (1.0, 1.25)
    shares: tuple = (0.5, 0.5)

    def __post_init__(self):
        if not len(self.labels) == len(self.delta1) == len(self.shares):
            raise ValueError("labels, delta1 and shares must align")
        if abs(sum(self.shares) - 1) > 1e-12 or min(self.shares) <= 0:
            raise ValueError("notice shares must be positive and sum to one")


def panel_config() -> tuple[SearchConfig, NoticeSpec]:
    """Two types (1 and 0.5, equal shares), later arrival rates 0.95, notices with delta(1) = 1 and 1.25."""
    cfg = SearchConfig(delta=(1.0, 0.95, 0.95, 0.95), types=((1.0, 0.5), (0.5, 0.5)))
    return cfg, NoticeSpec()


def notice_solutions(config: SearchConfig, notices: NoticeSpec) -> list[SearchSolution]:
    """Re-solve the full problem for each notice group's first-period arrival rate."""
    return [solve(replace(config, delta=(d1,) + tuple(config.delta[1:]))) for d1 in notices.delta1]


def notice_population_table(config: SearchConfig, notices: NoticeSpec, Dbar: int) -> tuple[ExitRateTable, dict]:
    """Exact exit-rate table of the notice panel and the structural paths per notice."""
    sols = notice_solutions(config, notices)
    num = np.empty((len(sols), Dbar))
    den = np.empty((len(sols), Dbar))
    structural = {}
    for l, sol in enumerate(sols):
        p = implied_hazards(sol, Dbar=Dbar)
        den[l] = p["survival"]
        num[l] = p["observed"] * p["survival"]
        structural[notices.labels[l]] = p["structural"]
    return ExitRateTable(num, den, notices.labels, "population"), structural


def simulate_panel(config: SearchConfig, notices: NoticeSpec, n: int, seed: int, Dbar: int | None = None,
                   replication: int = 0) -> SpellData:
    """Simulated spells from the search model with notice-specific first-period arrival rates.

    Notice groups get ``round(n * share)`` members (the last absorbs rounding);
    types are drawn by share; spells longer than ``Dbar`` are censored at
    ``Dbar + 1``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    Dbar = Dbar or config.D_T
    sols = notice_solutions(config, notices)
    counts = [int(round(n * s)) for s in notices.shares[:-1]]
    counts.append(n - sum(counts))
    notice = np.repeat(np.arange(len(counts)), counts)
    U = uniform_block(seed, replication, n, 1 + Dbar, salt=2)
    pi = np.array([p for _, p in config.types])
    t = np.minimum(np.searchsorted(np.cumsum(pi), U[:, 0], side="right"), len(pi) - 1)
    haz = np.stack([s.hazard_path(Dbar) for s in sols])  # (notices, types, Dbar)
    exits = U[:, 1:] < haz[notice, t]
    first = np.where(exits.any(axis=1), exits.argmax(axis=1) + 1, Dbar + 1)
    return SpellData(notice=notice, duration=first, censored=first > Dbar, notice_labels=notices.labels)


def panel_task(config: SearchConfig, notices: NoticeSpec, spec=None):
    """Pipeline ``simulate_panel -> gmm_estimate`` for :func:`mixhazard.simlab.monte_carlo`."""
    from mixhazard.estimator import GmmSpec, gmm_estimate

    spec = spec or GmmSpec(Dbar=config.D_T)

    def task(n, seed, r):
        return gmm_estimate(simulate_panel(config, notices, n, seed, spec.Dbar, replication=r), None, spec)

    return task
