"""Reference plants and snapshot generation.

Three ground-truth systems are provided:

* 1D viscous Burgers equation on a periodic domain with a distributed
  control ``u(t) chi(x)`` (:class:`BurgersPlant`),
* the forced Van der Pol oscillator (:class:`VanDerPolPlant`),
* a discrete control-affine linear system ``z+ = M z + N u``
  (:class:`LinearTestPlant`), for which EDMD with monomials is exact.

All plants share the small interface used by the controllers:
``step(state, u, dt)``, ``observe(state)``, ``state_dim``, ``obs_dim``.
``step`` accepts stacked states (leading batch axes) as well.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import NumericalError, check_finite, steps_in
from .edmd import SnapshotSet

__all__ = [
    "BurgersConfig",
    "VdpConfig",
    "Trajectory",
    "BurgersPlant",
    "VanDerPolPlant",
    "LinearTestPlant",
    "burgers_step",
    "burgers_rhs",
    "vdp_step",
    "observe_burgers",
    "default_burgers_initial_conditions",
    "ConstantSchedule",
    "CyclicSchedule",
    "simulate",
    "generate_snapshots",
    "pairs_from_trajectory",
    "EmptyBucketError",
]


class EmptyBucketError(ValueError):
    """Some control value received no snapshot pairs."""

    def __init__(self, empty_values):
        self.empty_values = list(empty_values)
        super().__init__(f"empty control bucket for control value(s) {self.empty_values}")


def _rk4(rhs, y, dt, n, label):
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * dt * k1)
            k3 = rhs(y + 0.5 * dt * k2)
            k4 = rhs(y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"{label}: non-finite state after substep {i + 1} (t = {(i + 1) * dt:.6g} s)")
    return y


@dataclass(frozen=True)
class BurgersConfig:
    """Discretization of the periodic controlled Burgers equation.

    The shape function is a sum of Gaussian bumps
    ``chi(x) = sum_c exp(-((x - c) / w)^2)`` evaluated periodically.
    """

    viscosity: float = 0.01
    grid_points: int = 49
    domain_length: float = 2.0
    dt_sim: float = 0.005
    shape_centers: tuple = (0.25, 1.25)
    shape_width: float = 0.1
    obs_points: tuple = (0.0, 0.5, 1.0, 1.5)
    x: np.ndarray = field(init=False, repr=False, compare=False)
    chi: np.ndarray = field(init=False, repr=False, compare=False)
    obs_indices: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        if int(self.grid_points) != self.grid_points or self.grid_points < 8:
            raise ValueError("grid_points must be an integer >= 8")
        if not self.dt_sim > 0 or not self.domain_length > 0:
            raise ValueError("dt_sim and domain_length must be positive")
        n = int(self.grid_points)
        object.__setattr__(self, "grid_points", n)
        dx = self.dx
        diffusion = self.viscosity * self.dt_sim / dx**2
        if diffusion > 0.5:
            raise ValueError(f"unstable discretization: nu*dt/dx^2 = {diffusion:.3g} > 0.5")
        x = np.arange(n) * dx
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "chi", _shape_function(x, self.domain_length, self.shape_centers, self.shape_width))
        object.__setattr__(self, "shape_centers", tuple(self.shape_centers))
        object.__setattr__(self, "obs_points", tuple(float(p) for p in self.obs_points))
        object.__setattr__(self, "obs_indices", self._snap_obs_points())

    @property
    def dx(self):
        return self.domain_length / self.grid_points

    def _snap_obs_points(self):
        dx, n = self.dx, self.grid_points
        indices = []
        for p in self.obs_points:
            if not 0.0 <= p < self.domain_length:
                raise ValueError(f"observation point {p} outside [0, {self.domain_length})")
            pos = p / dx
            idx = int(np.floor(pos + 0.5))
            off = abs(pos - idx)
            # ties (exactly half a cell) snap upwards
            if off > 0.5 + 1e-9:
                raise ValueError(f"observation point {p} is not representable on the grid")
            if off > 1e-9:
                warnings.warn(
                    f"observation point {p} snapped to grid node x={idx % n * dx:.6g}",
                    stacklevel=4,
                )
            indices.append(idx % n)
        return tuple(indices)


def _shape_function(x, length, centers, width):
    chi = np.zeros_like(x)
    for c in centers:
        # periodic distance to the bump center
        r = (x - c + 0.5 * length) % length - 0.5 * length
        chi += np.exp(-((r / width) ** 2))
    chi.setflags(write=False)
    return chi


def burgers_rhs(cfg, y, u):
    """Semi-discrete right-hand side; ``y`` may carry leading batch axes.

    Second-order central differences for diffusion and for the conservative
    convection term ``(y^2 / 2)_x`` with periodic wrap.  ``u`` is a scalar or
    an array broadcastable against ``y[..., :1]``.
    """
    dx = cfg.dx
    yp = np.roll(y, -1, axis=-1)
    ym = np.roll(y, 1, axis=-1)
    diffusion = cfg.viscosity * (yp - 2.0 * y + ym) / dx**2
    convection = (yp * yp - ym * ym) / (4.0 * dx)
    forcing = np.asarray(u)[..., None] * cfg.chi if np.ndim(u) else u * cfg.chi
    return diffusion - convection + forcing


def burgers_step(cfg, y, u, dt):
    """Advance the Burgers state by ``dt`` (a multiple of ``cfg.dt_sim``) with RK4."""
    y = check_finite(y, "state")
    if y.shape[-1] != cfg.grid_points:
        raise ValueError(f"state must have {cfg.grid_points} grid values, got {y.shape}")
    n = steps_in(dt, cfg.dt_sim, "dt")
    u_arr = np.asarray(u, dtype=float)
    return _rk4(lambda v: burgers_rhs(cfg, v, u_arr if u_arr.ndim else float(u_arr)), y, cfg.dt_sim, n, "burgers")


def observe_burgers(cfg, y):
    """State values at the configured observation nodes."""
    y = np.asarray(y, dtype=float)
    return y[..., list(cfg.obs_indices)].copy()


def default_burgers_initial_conditions(cfg):
    """Three diverse smooth initial states used for data collection."""
    x = cfg.x
    L = cfg.domain_length
    return [
        np.sin(2.0 * np.pi * x / L),
        np.sin(4.0 * np.pi * x / L) * np.exp(-((x - 0.5 * L) ** 2)),
        np.zeros_like(x),
    ]


@dataclass(frozen=True)
class VdpConfig:
    dt_sim: float = 0.01
    y0: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be positive")


def vdp_rhs(y, u):
    y1, y2 = y[..., 0], y[..., 1]
    return np.stack([y2, (1.0 - y1**2) * y2 - y1 + u], axis=-1)


def vdp_step(cfg, y, u, dt):
    """RK4 integration of the forced Van der Pol oscillator over ``dt``.

    ``dt`` need not be a multiple of ``cfg.dt_sim``; the substep is shrunk to
    the nearest divisor.
    """
    y = check_finite(y, "state")
    if y.shape[-1] != 2:
        raise ValueError("Van der Pol state must have 2 entries")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = max(1, int(np.ceil(dt / cfg.dt_sim - 1e-9)))
    u_arr = np.asarray(u, dtype=float)
    return _rk4(lambda v: vdp_rhs(v, u_arr), y, dt / n, n, "van der pol")


class BurgersPlant:
    """Controlled periodic Burgers equation observed at a few grid nodes."""

    name = "burgers"

    def __init__(self, config=None):
        self.config = config or BurgersConfig()

    @property
    def state_dim(self):
        return self.config.grid_points

    @property
    def obs_dim(self):
        return len(self.config.obs_indices)

    def step(self, y, u, dt):
        return burgers_step(self.config, y, u, dt)

    def observe(self, y):
        return observe_burgers(self.config, y)

    def initial_conditions(self):
        return default_burgers_initial_conditions(self.config)


class VanDerPolPlant:
    """Forced Van der Pol oscillator with full-state observation."""

    name = "vdp"
    state_dim = 2
    obs_dim = 2

    def __init__(self, config=None):
        self.config = config or VdpConfig()

    def step(self, y, u, dt):
        return vdp_step(self.config, y, u, dt)

    def observe(self, y):
        return np.array(y, dtype=float, copy=True)

    def initial_conditions(self):
        return [np.array(self.config.y0, dtype=float)]


class LinearTestPlant:
    """Discrete control-affine system ``z_{i+1} = M z_i + N u_i`` with sample time ``h``.

    The whole state is observed.  For constant inputs the observation
    dynamics are affine, so every monomial dictionary is closed under them
    and EDMD recovers the dynamics exactly.
    """

    name = "linear"

    def __init__(self, M, N, sample_time=0.1):
        M = check_finite(M, "M")
        N = check_finite(N, "N").reshape(-1)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or N.shape[0] != M.shape[0]:
            raise ValueError("M must be square and N must match its size")
        self.M = M
        self.N = N
        self.sample_time = float(sample_time)

    @classmethod
    def random(cls, dim=2, rng=None, spectral_radius=0.9, sample_time=0.1):
        """Random stable plant: ``M`` scaled to the given spectral radius."""
        rng = np.random.default_rng(rng)
        M = rng.standard_normal((dim, dim))
        M *= spectral_radius / max(np.max(np.abs(np.linalg.eigvals(M))), 1e-12)
        N = rng.standard_normal(dim)
        return cls(M, N, sample_time)

    @property
    def state_dim(self):
        return self.M.shape[0]

    @property
    def obs_dim(self):
        return self.M.shape[0]

    def step(self, y, u, dt):
        n = steps_in(dt, self.sample_time, "dt")
        y = check_finite(y, "state")
        u = np.asarray(u, dtype=float)
        forcing = u[..., None] * self.N if u.ndim else float(u) * self.N
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n):
                y = y @ self.M.T + forcing
                if not np.all(np.isfinite(y)):
                    raise NumericalError(f"linear plant: non-finite state after step {i + 1}")
        return y

    def observe(self, y):
        return np.array(y, dtype=float, copy=True)

    def initial_conditions(self):
        return [np.zeros(self.state_dim)]


@dataclass
class Trajectory:
    """Sampled trajectory: ``states[i]`` at ``times[i]``; ``controls[i]`` on ``[t_i, t_{i+1})``."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    observations: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.states) != len(self.times) or len(self.controls) != max(len(self.times) - 1, 0):
            raise ValueError("trajectory lengths inconsistent (controls must be one shorter than states)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.observations is not None:
            self.observations = np.asarray(self.observations, dtype=float)
            if self.observations.ndim == 1:
                self.observations = self.observations[:, None]
            if len(self.observations) != len(self.times):
                raise ValueError("observations must align with times")
        for arr in (self.times, self.states, self.controls):
            check_finite(arr, "trajectory")

    def __len__(self):
        return len(self.times)


class ConstantSchedule:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t):
        return self.value

    def __repr__(self):
        return f"ConstantSchedule({self.value})"


class CyclicSchedule:
    """Cycles through ``values``, holding each for ``period`` seconds."""

    def __init__(self, values, period):
        self.values = [float(v) for v in values]
        self.period = float(period)
        if not self.values or not self.period > 0:
            raise ValueError("need at least one value and a positive period")

    def __call__(self, t):
        idx = int(np.floor(t / self.period + 1e-9)) % len(self.values)
        return self.values[idx]

    def __repr__(self):
        return f"CyclicSchedule({self.values}, {self.period})"


def simulate(plant, y0, schedule, duration, dt_sample):
    """Simulate ``plant`` under ``schedule`` (a callable ``t -> u``), sampling every ``dt_sample``."""
    n = steps_in(duration, dt_sample, "duration")
    times = np.arange(n + 1) * dt_sample
    states = np.empty((n + 1, plant.state_dim))
    controls = np.array([schedule(t) for t in times[:-1]], dtype=float)
    y = np.asarray(y0, dtype=float)
    states[0] = y
    for i in range(n):
        y = plant.step(y, controls[i], dt_sample)
        states[i + 1] = y
    obs = np.array([plant.observe(s) for s in states])
    return Trajectory(times, states, controls, obs)


def pairs_from_trajectory(traj, lag_steps, stride=1):
    """Eligible snapshot pairs of a sampled trajectory, grouped by control value.

    A pair ``(z_i, z_{i+lag})`` is eligible only if the same control acts on
    the whole window ``[t_i, t_i + lag)``.  Returns ``{u: (Z, Ztilde)}``.
    """
    obs = traj.observations if traj.observations is not None else traj.states
    u = traj.controls
    n_int = len(u)
    if n_int < lag_steps:
        return {}
    # run[i]: number of consecutive equal controls starting at interval i
    run = np.ones(n_int, dtype=int)
    for i in range(n_int - 2, -1, -1):
        if u[i + 1] == u[i]:
            run[i] = run[i + 1] + 1
    starts = np.arange(0, n_int - lag_steps + 1, stride)
    starts = starts[run[starts] >= lag_steps]
    out = {}
    for value in np.unique(u[starts]):
        idx = starts[u[starts] == value]
        out[float(value)] = (obs[idx].T, obs[idx + lag_steps].T)
    return out


def generate_snapshots(plant, schedules, initial_conditions, duration, dt_sample, lag_h,
                       control_values=None, stride=1, obs_names=None):
    """Simulate every (initial condition, schedule) run and bucket the pairs by control.

    Returns
    -------
    dict
        ``{control_value: SnapshotSet}`` ordered by control value.

    Raises
    ------
    EmptyBucketError
        If any expected control value received no pairs.
    """
    lag_steps = steps_in(lag_h, dt_sample, "lag_h")
    if lag_steps < 1:
        raise ValueError("lag_h must be at least one sample")
    buckets = {}
    for y0 in initial_conditions:
        for schedule in schedules:
            traj = simulate(plant, y0, schedule, duration, dt_sample)
            for value, (Z, Zt) in pairs_from_trajectory(traj, lag_steps, stride).items():
                buckets.setdefault(value, []).append((Z, Zt))
    if control_values is None:
        control_values = sorted({s(0.0) for s in schedules if isinstance(s, ConstantSchedule)}
                                | {v for s in schedules if isinstance(s, CyclicSchedule) for v in s.values})
    empty = [v for v in control_values if v not in buckets]
    if empty:
        raise EmptyBucketError(empty)
    result = {}
    for value in sorted(control_values):
        Z = np.hstack([b[0] for b in buckets[value]])
        Zt = np.hstack([b[1] for b in buckets[value]])
        result[float(value)] = SnapshotSet(Z, Zt, lag_h, value, obs_names)
    return result
