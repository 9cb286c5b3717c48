"""Receding-horizon controllers on Koopman surrogates.

Stage ``j = 1..p`` of a horizon started at ``t_s`` compares the ``j``-th
predicted observation with the reference at ``t_s + j h``.  The same
convention is used by the plant-based oracle, so surrogate and oracle costs
are directly comparable.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from ._validation import NumericalError, check_vector, steps_in
from .dictionary import lift, project
from .edmd import online_update, refit, weight_from_fraction
from .krom import BilinearModel, LocalizedBilinear, SwitchedBank, predict_bilinear, predict_switched, select_segment
from .plant import Trajectory

__all__ = [
    "MpcConfig",
    "MpcSolution",
    "BudgetExceeded",
    "stage_cost",
    "horizon_cost",
    "solve_switched",
    "solve_continuous",
    "continuous_cost_and_grad",
    "PlantOracle",
    "UpdatePolicy",
    "Trace",
    "ClosedLoopResult",
    "closed_loop",
    "running_cost_window",
    "constant_reference",
    "piecewise_constant_reference",
    "sampled_reference",
]


class BudgetExceeded(ValueError):
    def __init__(self, required, budget):
        self.required = required
        self.budget = budget
        super().__init__(f"enumeration needs {required} sequences, budget is {budget}")


@dataclass
class MpcConfig:
    """Finite-horizon tracking problem.

    Parameters
    ----------
    horizon : int
        Prediction horizon ``p``.
    sample_time : float
        ``h``; must equal the surrogate's lag time.
    reference : callable
        ``t -> target`` for the tracked observation entries.
    tracked_indices : sequence of int or None
        Observation entries entering the cost; ``None`` tracks all.
    control_bounds : (float, float) or None
        Box for the continuous solver; defaults to the model's range.
    """

    horizon: int
    sample_time: float
    reference: object
    tracked_indices: tuple = None
    control_bounds: tuple = None
    budget: int = 10**6
    n_starts: int = None
    max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be an integer >= 1")
        self.horizon = int(self.horizon)
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")
        if self.tracked_indices is not None:
            self.tracked_indices = tuple(int(i) for i in self.tracked_indices)

    def targets(self, t_s):
        """``(p, n_tracked)`` reference values at ``t_s + h .. t_s + p h``."""
        h = self.sample_time
        return np.array([np.atleast_1d(self.reference(t_s + j * h)) for j in range(1, self.horizon + 1)], dtype=float)


@dataclass
class MpcSolution:
    controls: list
    predicted_cost: float
    predicted_observations: list
    solver_stats: dict = field(default_factory=dict)
    values: list = None


def _tracked(z, tracked):
    z = np.asarray(z, dtype=float)
    if tracked is None:
        return z
    tracked = list(tracked)
    if tracked and max(tracked) >= z.shape[-1]:
        raise ValueError(f"tracked index {max(tracked)} out of range for observation of length {z.shape[-1]}")
    return z[..., tracked]


def stage_cost(z, z_opt, tracked=None):
    """Squared Euclidean tracking error on the tracked entries."""
    e = _tracked(z, tracked)
    z_opt = np.asarray(z_opt, dtype=float)
    if e.shape[-1] != z_opt.shape[-1]:
        raise ValueError(f"target has {z_opt.shape[-1]} entries, tracked observation has {e.shape[-1]}")
    return float(np.sum((e - z_opt) ** 2))


def horizon_cost(observations, cfg, t_s):
    """Sum of stage costs of a predicted observation sequence."""
    targets = cfg.targets(t_s)
    return float(sum(stage_cost(z, r, cfg.tracked_indices) for z, r in zip(observations, targets)))


def _enumerate(advance, observe, x0, n_c, cfg, t_s):
    """Exhaustive search over all ``n_c^p`` index sequences.

    ``advance(X)`` maps ``(n, ...)`` stacked states to ``(n, n_c, ...)``
    successors, one per control index.  Sequences are indexed
    lexicographically, so ``argmin`` returns the lexicographically smallest
    minimizer on exact ties.
    """
    p = cfg.horizon
    required = n_c**p
    if required > cfg.budget:
        raise BudgetExceeded(required, cfg.budget)
    targets = cfg.targets(t_s)
    X = np.asarray(x0, dtype=float)[None]
    cost = np.zeros(1)
    for j in range(p):
        X = advance(X)
        X = X.reshape((-1,) + X.shape[2:])
        err = _tracked(observe(X), cfg.tracked_indices) - targets[j]
        cost = np.repeat(cost, n_c) + np.sum(err * err, axis=-1)
    if not np.all(np.isfinite(cost)):
        raise NumericalError("non-finite cost during enumeration")
    best = int(np.argmin(cost))
    seq = [int(d) for d in np.unravel_index(best, (n_c,) * p)]
    return seq, float(cost[best]), required


def solve_switched(bank, z_s, cfg, t_s=0.0):
    """Optimal index sequence over the switched K-ROM by full enumeration."""
    if not np.isclose(bank.lag_time, cfg.sample_time):
        raise ValueError("sample time must equal the bank's lag time")
    d = bank.dictionary
    z_s = check_vector(z_s, d.obs_dim, "z_s")
    Us = [m.U_transpose for m in bank.models]

    def advance(Psi):
        out = np.empty((Psi.shape[0], len(Us), Psi.shape[1]))
        for i, U in enumerate(Us):
            out[:, i, :] = Psi @ U.T
        return out

    def observe(Psi):
        return Psi[:, 1:d.obs_dim + 1]

    seq, _, n_eval = _enumerate(advance, observe, lift(d, z_s), bank.n_controls, cfg, t_s)
    obs = predict_switched(bank, z_s, seq)
    cost = horizon_cost(obs, cfg, t_s)
    return MpcSolution(seq, cost, obs, {"evaluations": n_eval},
                       [float(bank.control_values[j]) for j in seq])


def _segments_for(model, u, side="right"):
    if isinstance(model, LocalizedBilinear):
        seg, alpha = select_segment(model, u)
        if side == "left" and alpha == 0.0 and seg is not model.segments[0]:
            # exactly on an interior anchor: take the segment to its left
            seg = model.segments[model.segments.index(seg) - 1]
            alpha = 1.0
        return seg, alpha
    return model, model.alpha(u)


def continuous_cost_and_grad(model, z_s, u, cfg, t_s=0.0, side="right", segments=None):
    """Rollout cost of a (localized) bilinear model and its gradient in ``u``.

    The gradient is obtained by a backward (adjoint) sweep through
    ``psi_j = (A_j + alpha_j B_j) psi_{j-1}``.  At interior anchors of a
    localized model the derivative is one-sided; ``side`` picks which.
    ``segments`` fixes the bilinear segment used at each step (the formula is
    then a polynomial in ``u``, evaluated without range checks).
    """
    d = model.dictionary
    q = d.obs_dim
    u = np.asarray(u, dtype=float)
    targets = cfg.targets(t_s)
    tracked = list(range(q)) if cfg.tracked_indices is None else list(cfg.tracked_indices)
    psi = lift(d, z_s)
    ops, Bpsi = [], []
    cost = 0.0
    errs = []
    with np.errstate(over="ignore", invalid="ignore"):
        for j, uj in enumerate(u):
            if segments is None:
                seg, alpha = _segments_for(model, float(uj), side)
            else:
                seg = segments[j]
                alpha = (float(uj) - seg.u_lo) / (seg.u_hi - seg.u_lo)
            M = seg.A + alpha * seg.B
            Bpsi.append(seg.B @ psi / (seg.u_hi - seg.u_lo))
            psi = M @ psi
            ops.append(M)
            e = psi[1:q + 1][tracked] - targets[j]
            errs.append(e)
            cost += float(e @ e)
    if not np.isfinite(cost):
        raise NumericalError("non-finite cost during bilinear rollout")
    grad = np.zeros(len(u))
    lam = np.zeros(d.size)
    for j in range(len(u) - 1, -1, -1):
        g = np.zeros(d.size)
        g[1:q + 1][tracked] = 2.0 * errs[j]
        lam = g + (ops[j + 1].T @ lam if j + 1 < len(u) else 0.0)
        grad[j] = lam @ Bpsi[j]
    return cost, grad


def _projected_gradient(u, g, lo, hi):
    return u - np.clip(u - g, lo, hi)


def _stationarity(model, z_s, u, cfg, t_s, lo, hi):
    """First-order stationarity measure; zero iff no feasible descent direction.

    Away from anchors this is the projected gradient norm.  A control sitting
    on an interior anchor of a localized model is stationary in that
    coordinate when moving either way does not decrease the cost.
    """
    _, g_right = continuous_cost_and_grad(model, z_s, u, cfg, t_s, "right")
    r = _projected_gradient(u, g_right, lo, hi)
    if isinstance(model, LocalizedBilinear):
        kinks = np.isin(u, model.anchors[1:-1]) & (u > lo) & (u < hi)
        if np.any(kinks):
            _, g_left = continuous_cost_and_grad(model, z_s, u, cfg, t_s, "left")
            r[kinks] = np.maximum(0.0, -g_right[kinks]) + np.maximum(0.0, g_left[kinks])
    return float(np.linalg.norm(r))


def _polish(model, z_s, u, cfg, t_s, lo, hi):
    """Refine ``u`` with every coordinate confined to one bilinear segment.

    Within a fixed choice of segments the cost is smooth, so L-BFGS-B
    converges cleanly; coordinates close to an interior anchor try both
    neighbouring segments.
    """
    tol = 1e-6 * (hi - lo)
    choices = []
    for uj in u:
        near = [s for s in model.segments
                if s.u_lo - tol <= uj <= s.u_hi + tol and max(s.u_lo, lo) < min(s.u_hi, hi)]
        choices.append(near)
    best, iterations, evaluations = None, 0, 0
    for combo in itertools.product(*choices):
        bounds = [(max(s.u_lo, lo), min(s.u_hi, hi)) for s in combo]
        b_lo, b_hi = np.array(bounds).T

        def fun(v, combo=combo):
            return continuous_cost_and_grad(model, z_s, v, cfg, t_s, segments=combo)

        res = minimize(fun, np.clip(u, b_lo, b_hi), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.max_iter, "ftol": 1e-15, "gtol": 1e-12})
        iterations += int(res.nit)
        evaluations += int(res.nfev)
        x = np.clip(res.x, b_lo, b_hi)
        c = fun(x)[0]
        if best is None or c < best[1]:
            best = (x, c)
    return best[0], iterations, evaluations


def solve_continuous(model, z_s, cfg, t_s=0.0, u_init=None):
    """Box-constrained optimal real controls over a (localized) bilinear K-ROM.

    L-BFGS-B with analytic adjoint gradients, started from ``u_init`` and,
    for multi-start, from constant anchor sequences and one random point.
    The best start is returned; it is never worse than ``u_init``.
    """
    if not isinstance(model, (BilinearModel, LocalizedBilinear)):
        raise TypeError("model must be a BilinearModel or LocalizedBilinear")
    if not np.isclose(model.lag_time, cfg.sample_time):
        raise ValueError("sample time must equal the model's lag time")
    d = model.dictionary
    z_s = check_vector(z_s, d.obs_dim, "z_s")
    m_lo, m_hi = model.bounds
    lo, hi = cfg.control_bounds if cfg.control_bounds is not None else (m_lo, m_hi)
    if lo < m_lo or hi > m_hi or not lo < hi:
        raise ValueError(f"control bounds ({lo}, {hi}) must lie inside the model range ({m_lo}, {m_hi})")
    p = cfg.horizon
    if u_init is None:
        u_init = np.full(p, 0.5 * (lo + hi))
    u_init = np.asarray(u_init, dtype=float)
    if u_init.shape != (p,):
        raise ValueError(f"u_init must have length {p}")
    if np.any(u_init < lo) or np.any(u_init > hi):
        raise ValueError("u_init outside the control bounds")

    n_starts = cfg.n_starts
    if n_starts is None:
        n_starts = 5 if isinstance(model, LocalizedBilinear) else 1
    starts = [u_init]
    if n_starts > 1:
        anchors = model.anchors if isinstance(model, LocalizedBilinear) else np.array([m_lo, m_hi])
        anchors = np.clip(anchors, lo, hi)
        mid = 0.5 * (lo + hi)
        chosen = sorted(set(anchors.tolist()), key=lambda a: abs(a - mid))[:3]
        starts += [np.full(p, a) for a in chosen]
        rng = np.random.default_rng(cfg.seed)
        starts.append(rng.uniform(lo, hi, p))
        starts = starts[:n_starts]

    def fun(u):
        return continuous_cost_and_grad(model, z_s, np.clip(u, lo, hi), cfg, t_s)

    best = None
    iterations = 0
    evaluations = 0
    init_cost = fun(u_init)[0]
    for u0 in starts:
        res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * p,
                       options={"maxiter": cfg.max_iter, "ftol": 1e-15, "gtol": 1e-12})
        iterations += int(res.nit)
        evaluations += int(res.nfev)
        u = np.clip(res.x, lo, hi)
        c = fun(u)[0]
        if best is None or c < best[1]:
            best = (u, c)
    u, c = best
    if isinstance(model, LocalizedBilinear):
        cand, its, evs = _polish(model, z_s, u, cfg, t_s, lo, hi)
        iterations += its
        evaluations += evs
        c_cand = fun(cand)[0]
        if c_cand <= c:
            u, c = cand, c_cand
        # round-off distance from an anchor would hide a kink minimum
        snapped = u.copy()
        for a in model.anchors[1:-1]:
            snapped[np.abs(snapped - a) <= 1e-9 * (hi - lo)] = a
        c_snap = fun(snapped)[0]
        if c_snap <= c + 1e-12 * (1.0 + abs(c)):
            u, c = snapped, c_snap
    if c > init_cost:
        u, c = u_init.copy(), init_cost
    pg = _stationarity(model, z_s, u, cfg, t_s, lo, hi)
    obs = predict_bilinear(model, z_s, u)
    stats = {
        "iterations": iterations,
        "evaluations": evaluations,
        "starts": len(starts),
        "projected_gradient": pg,
        "stationary": pg <= 1e-6 * (1.0 + abs(c)),
        "initial_cost": init_cost,
    }
    return MpcSolution(u.tolist(), horizon_cost(obs, cfg, t_s), obs, stats, u.tolist())


class PlantOracle:
    """MPC that uses the plant itself as the predictor.

    With ``continuous=False`` it enumerates sequences over
    ``control_values``; otherwise it solves a box-constrained problem in
    ``bounds`` with finite-difference gradients.
    """

    def __init__(self, plant, control_values=None, continuous=False, bounds=None):
        self.plant = plant
        self.control_values = None if control_values is None else np.sort(np.asarray(control_values, dtype=float))
        self.continuous = continuous
        self.bounds = bounds
        if not continuous and self.control_values is None:
            raise ValueError("switched oracle needs control values")
        if continuous and bounds is None:
            raise ValueError("continuous oracle needs bounds")

    def rollout(self, y_s, controls, dt):
        obs = []
        y = np.asarray(y_s, dtype=float)
        for u in controls:
            y = self.plant.step(y, u, dt)
            obs.append(self.plant.observe(y))
        return obs

    def solve(self, y_s, cfg, t_s=0.0, u_init=None):
        h = cfg.sample_time
        if self.continuous:
            return self._solve_continuous(y_s, cfg, t_s, u_init)
        values = self.control_values
        n_c = len(values)

        def advance(Y):
            n = Y.shape[0]
            Yr = np.repeat(Y, n_c, axis=0)
            us = np.tile(values, n)
            return self.plant.step(Yr, us, h).reshape((n, n_c) + Y.shape[1:])

        seq, _, n_eval = _enumerate(advance, self.plant.observe, y_s, n_c, cfg, t_s)
        vals = [float(values[j]) for j in seq]
        obs = self.rollout(y_s, vals, h)
        return MpcSolution(seq, horizon_cost(obs, cfg, t_s), obs, {"evaluations": n_eval}, vals)

    def _solve_continuous(self, y_s, cfg, t_s, u_init):
        lo, hi = self.bounds
        p = cfg.horizon
        u0 = np.full(p, 0.5 * (lo + hi)) if u_init is None else np.asarray(u_init, dtype=float)

        def fun(u):
            return horizon_cost(self.rollout(y_s, np.clip(u, lo, hi), cfg.sample_time), cfg, t_s)

        res = minimize(fun, u0, method="L-BFGS-B", bounds=[(lo, hi)] * p,
                       options={"maxiter": cfg.max_iter, "eps": 1e-6})
        u = np.clip(res.x, lo, hi)
        if fun(u) > fun(u0):
            u = u0
        obs = self.rollout(y_s, u, cfg.sample_time)
        return MpcSolution(u.tolist(), horizon_cost(obs, cfg, t_s), obs,
                           {"iterations": int(res.nit), "evaluations": int(res.nfev)}, u.tolist())


@dataclass
class UpdatePolicy:
    """Online refits of a switched bank from closed-loop data.

    ``accumulators[j]`` belongs to the ``j``-th model of the bank.  Each applied
    step adds its pair with weight ``weight_from_fraction(m, epsilon)``; all
    models are refit every ``period`` seconds.
    """

    accumulators: list
    epsilon: float = 0.025
    period: float = 10.0

    def __post_init__(self):
        self.accumulators = list(self.accumulators)
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.period > 0:
            raise ValueError("period must be positive")


@dataclass
class Trace:
    """Closed-loop record sampled at ``t_k = k h``.

    ``stage_costs[k]`` is the squared tracked error of the plant observation
    at ``t_k``; ``controls[k]`` acts on ``[t_k, t_{k+1})``.
    """

    times: np.ndarray
    controls: np.ndarray
    observations: np.ndarray
    references: np.ndarray
    stage_costs: np.ndarray
    solve_times: np.ndarray
    tracked_indices: tuple = None

    @property
    def total_cost(self):
        """Sum of stage costs after the initial sample."""
        return float(np.sum(self.stage_costs[1:]))

    def integrated_cost(self):
        """Trapezoidal time integral of the stage cost over the whole run."""
        if len(self.times) < 2:
            return 0.0
        return float(trapezoid(self.stage_costs, self.times))

    def window_costs(self, window):
        return np.array([running_cost_window(self, t, min(window, t - self.times[0])) for t in self.times])


@dataclass
class ClosedLoopResult:
    trace: Trace
    trajectory: Trajectory
    solutions: list
    update_times: list = field(default_factory=list)
    banks: list = field(default_factory=list)


def closed_loop(plant, surrogate, cfg, y0, duration, update_policy=None):
    """Receding-horizon loop: observe, solve, apply the first control for ``h``.

    ``surrogate`` is a :class:`SwitchedBank`, a bilinear model, or a
    :class:`PlantOracle`.  Online updates require a switched bank.
    """
    h = cfg.sample_time
    n = steps_in(duration, h, "duration")
    if isinstance(surrogate, (SwitchedBank, BilinearModel, LocalizedBilinear)):
        if not np.isclose(surrogate.lag_time, h):
            raise ValueError("surrogate lag time must equal the sample time")
    if update_policy is not None:
        if not isinstance(surrogate, SwitchedBank):
            raise ValueError("online updates are only supported for switched banks")
        if len(update_policy.accumulators) != surrogate.n_controls:
            raise ValueError("need one accumulator per bank model")
        period_steps = steps_in(update_policy.period, h, "update period")
        accs = list(update_policy.accumulators)

    y = np.asarray(y0, dtype=float)
    z = plant.observe(y)
    times = np.arange(n + 1) * h
    states = [y]
    observations = [z]
    controls, solve_times, solutions = [], [], []
    update_times, banks = [], [surrogate]
    bank = surrogate
    prev = None
    for k in range(n):
        t = times[k]
        tic = time.perf_counter()
        try:
            if isinstance(bank, SwitchedBank):
                sol = solve_switched(bank, z, cfg, t)
            elif isinstance(bank, (BilinearModel, LocalizedBilinear)):
                lo, hi = cfg.control_bounds if cfg.control_bounds is not None else bank.bounds
                if prev is None:
                    u_init = np.full(cfg.horizon, 0.5 * (lo + hi))
                else:
                    u_init = np.clip(np.append(prev[1:], prev[-1]), lo, hi)
                sol = solve_continuous(bank, z, cfg, t, u_init)
                prev = np.asarray(sol.controls)
            elif isinstance(bank, PlantOracle):
                u_init = None
                if bank.continuous and prev is not None:
                    u_init = np.append(prev[1:], prev[-1])
                sol = bank.solve(y, cfg, t, u_init)
                prev = np.asarray(sol.values)
            else:
                raise TypeError(f"unsupported surrogate {type(bank).__name__}")
        except NumericalError as exc:
            raise NumericalError(f"step {k} (t = {t:.6g}): {exc}") from exc
        except ValueError as exc:
            raise ValueError(f"step {k} (t = {t:.6g}): {exc}") from exc
        solve_times.append(time.perf_counter() - tic)
        solutions.append(sol)
        u = sol.values[0]
        try:
            y = plant.step(y, u, h)
        except NumericalError as exc:
            raise NumericalError(f"plant failure at step {k} (t = {t:.6g}): {exc}") from exc
        z_next = plant.observe(y)
        if update_policy is not None:
            j = bank.index_of(u)
            acc = accs[j]
            accs[j] = online_update(acc, z, z_next, weight_from_fraction(acc.m, update_policy.epsilon))
            if (k + 1) % period_steps == 0:
                bank = SwitchedBank(tuple(refit(a) for a in accs))
                update_times.append(times[k + 1])
                banks.append(bank)
        z = z_next
        states.append(y)
        observations.append(z)
        controls.append(u)
    if update_policy is not None:
        update_policy.accumulators = accs

    observations = np.array(observations)
    references = np.array([np.atleast_1d(np.asarray(cfg.reference(t), dtype=float)) for t in times])
    tracked = _tracked(observations, cfg.tracked_indices)
    costs = np.sum((tracked - references) ** 2, axis=-1)
    trace = Trace(times, np.array(controls, dtype=float), observations, references, costs,
                  np.array(solve_times), cfg.tracked_indices)
    traj = Trajectory(times, np.array(states), np.array(controls, dtype=float), observations)
    return ClosedLoopResult(trace, traj, solutions, update_times, banks)


def running_cost_window(trace, t, window):
    """Trapezoidal integral of the stage cost over ``[t - window, t]``.

    The stage cost is linearly interpolated between trace samples.
    """
    if window < 0:
        raise ValueError("window must be non-negative")
    times = np.asarray(trace.times, dtype=float)
    costs = np.asarray(trace.stage_costs, dtype=float)
    if window == 0:
        return 0.0
    a, b = t - window, t
    tol = 1e-9 * max(1.0, abs(t))
    if len(times) == 0 or a < times[0] - tol or b > times[-1] + tol:
        raise ValueError(f"window [{a}, {b}] is not covered by the trace")
    a = max(a, times[0])
    b = min(b, times[-1])
    inside = (times > a) & (times < b)
    ts = np.concatenate([[a], times[inside], [b]])
    cs = np.interp(ts, times, costs)
    return float(trapezoid(cs, ts))


def constant_reference(value):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda t: value


def piecewise_constant_reference(breaks, values):
    """Reference equal to ``values[i]`` on ``[breaks[i-1], breaks[i])``.

    ``len(values) == len(breaks) + 1``; the last value holds after the last break.
    """
    breaks = np.asarray(breaks, dtype=float)
    values = [np.atleast_1d(np.asarray(v, dtype=float)) for v in values]
    if len(values) != len(breaks) + 1:
        raise ValueError("need one more value than breaks")

    def ref(t):
        return values[int(np.searchsorted(breaks, t + 1e-12, side="right"))]

    return ref


def sampled_reference(times, values):
    """Reference from samples, linearly interpolated (held constant beyond the ends)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]

    def ref(t):
        return np.array([np.interp(t, times, values[:, i]) for i in range(values.shape[1])])

    return ref
