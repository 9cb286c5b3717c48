"""Koopman reduced-order predictors built from fitted :class:`KoopmanModel` s.

* :class:`SwitchedBank` -- one autonomous model per constant input; a
  control sequence picks which operator advances each step.
* :class:`BilinearModel` -- linear interpolation between two anchor
  operators, ``psi+ = (A + alpha B) psi``.
* :class:`LocalizedBilinear` -- piecewise bilinear interpolation over
  consecutive anchors.

All rollouts lift the initial observation once and stay in the lifted space,
projecting each step for output.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_finite, check_vector, frozen
from .dictionary import lift, project
from .edmd import KoopmanModel

__all__ = [
    "SwitchedBank",
    "BilinearModel",
    "LocalizedBilinear",
    "krom_step",
    "rollout",
    "predict_switched",
    "bilinear_step",
    "build_bilinear",
    "build_localized",
    "select_segment",
    "localized_step",
    "predict_bilinear",
]


def _check_compatible(models):
    first = models[0]
    for m in models[1:]:
        if m.dictionary != first.dictionary:
            raise ValueError("models must share one dictionary")
        if not np.isclose(m.lag_time, first.lag_time, rtol=1e-12, atol=0.0):
            raise ValueError("models must share one lag time")


@dataclass(frozen=True)
class SwitchedBank:
    """Koopman models for ``n_c >= 2`` constant inputs, sorted by control value."""

    models: tuple

    def __post_init__(self):
        models = tuple(sorted(self.models, key=lambda m: m.control_value))
        if len(models) < 2:
            raise ValueError("a switched bank needs at least two models")
        _check_compatible(models)
        values = [m.control_value for m in models]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"control values must be distinct, got {values}")
        object.__setattr__(self, "models", models)

    @property
    def dictionary(self):
        return self.models[0].dictionary

    @property
    def lag_time(self):
        return self.models[0].lag_time

    @property
    def control_values(self):
        return np.array([m.control_value for m in self.models])

    @property
    def n_controls(self):
        return len(self.models)

    def index_of(self, u):
        """Index of the model whose control value equals ``u``."""
        hits = np.flatnonzero(np.isclose(self.control_values, u, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"no model for control value {u}")
        return int(hits[0])


def krom_step(model, lifted):
    """One K-ROM step ``U^T psi``."""
    lifted = check_vector(lifted, model.size, "lifted")
    return model.U_transpose @ lifted


def rollout(model, lifted, steps):
    """``steps`` K-ROM steps from ``lifted``; returns a ``(steps, k)`` array."""
    out = np.empty((steps, model.size))
    psi = check_vector(lifted, model.size, "lifted")
    for i in range(steps):
        psi = model.U_transpose @ psi
        out[i] = psi
    return out


def predict_switched(bank, z0, sequence, relift=False):
    """Observations after each step of the switched K-ROM.

    Parameters
    ----------
    bank : SwitchedBank
    z0 : array_like, shape (q,)
    sequence : sequence of int
        Model index per step.
    relift : bool
        Diagnostic mode: project and re-lift between steps instead of
        propagating the lifted state.

    Returns
    -------
    list of ndarray
        ``len(sequence)`` observations.
    """
    d = bank.dictionary
    seq = [int(j) for j in sequence]
    for j in seq:
        if not 0 <= j < bank.n_controls:
            raise IndexError(f"control index {j} out of range [0, {bank.n_controls})")
    psi = lift(d, check_vector(z0, d.obs_dim, "z0"))
    out = []
    for j in seq:
        psi = bank.models[j].U_transpose @ psi
        z = project(d, psi)
        out.append(z)
        if relift:
            psi = lift(d, z)
    return out


@dataclass(frozen=True)
class BilinearModel:
    """Interpolated model ``psi+ = (A + alpha B) psi``, ``alpha = (u - u_lo) / (u_hi - u_lo)``."""

    dictionary: object
    lag_time: float
    u_lo: float
    u_hi: float
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        k = self.dictionary.size
        for name in ("A", "B"):
            M = check_finite(getattr(self, name), name)
            if M.shape != (k, k):
                raise ValueError(f"{name} must be {k}x{k}")
            object.__setattr__(self, name, frozen(M))
        if not float(self.u_lo) < float(self.u_hi):
            raise ValueError("u_lo must be smaller than u_hi")
        object.__setattr__(self, "u_lo", float(self.u_lo))
        object.__setattr__(self, "u_hi", float(self.u_hi))

    @property
    def size(self):
        return self.dictionary.size

    @property
    def bounds(self):
        return self.u_lo, self.u_hi

    def alpha(self, u):
        if not self.u_lo <= u <= self.u_hi:
            raise ValueError(f"u={u} outside [{self.u_lo}, {self.u_hi}]")
        return (u - self.u_lo) / (self.u_hi - self.u_lo)

    def operator(self, u):
        return self.A + self.alpha(u) * self.B


def build_bilinear(model_a, model_b):
    """Bilinear model from two anchor models, oriented so that ``u_lo < u_hi``."""
    _check_compatible([model_a, model_b])
    if model_a.control_value == model_b.control_value:
        raise ValueError("anchor models must have distinct control values")
    lo, hi = sorted([model_a, model_b], key=lambda m: m.control_value)
    return BilinearModel(
        lo.dictionary,
        lo.lag_time,
        lo.control_value,
        hi.control_value,
        lo.U_transpose,
        hi.U_transpose - lo.U_transpose,
    )


def bilinear_step(model, lifted, u):
    lifted = check_vector(lifted, model.size, "lifted")
    alpha = model.alpha(float(u))
    return model.A @ lifted + alpha * (model.B @ lifted)


@dataclass(frozen=True)
class LocalizedBilinear:
    """Bilinear segments tiling ``[u^0, u^{n-1}]``.

    Segment ``l`` covers ``[u^l, u^{l+1})``; the last segment is closed.
    """

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("need at least one segment")
        for s in segs[1:]:
            if s.dictionary != segs[0].dictionary or not np.isclose(s.lag_time, segs[0].lag_time):
                raise ValueError("segments must share dictionary and lag time")
        for left, right in zip(segs, segs[1:]):
            if left.u_hi != right.u_lo:
                raise ValueError("segments must be contiguous and sorted")
        object.__setattr__(self, "segments", segs)

    @property
    def dictionary(self):
        return self.segments[0].dictionary

    @property
    def lag_time(self):
        return self.segments[0].lag_time

    @property
    def size(self):
        return self.dictionary.size

    @property
    def bounds(self):
        return self.segments[0].u_lo, self.segments[-1].u_hi

    @property
    def anchors(self):
        return np.array([s.u_lo for s in self.segments] + [self.segments[-1].u_hi])


def build_localized(bank):
    """Localized bilinear family from consecutive anchors of a switched bank."""
    models = bank.models if isinstance(bank, SwitchedBank) else SwitchedBank(tuple(bank)).models
    return LocalizedBilinear(tuple(build_bilinear(a, b) for a, b in zip(models, models[1:])))


def select_segment(local, u):
    """Segment containing ``u`` and the local interpolation weight."""
    lo, hi = local.bounds
    u = float(u)
    if not lo <= u <= hi:
        raise ValueError(f"u={u} outside [{lo}, {hi}]")
    for idx, seg in enumerate(local.segments):
        if u < seg.u_hi or idx == len(local.segments) - 1:
            return seg, seg.alpha(u)
    raise AssertionError("unreachable")


def localized_step(local, lifted, u):
    seg, alpha = select_segment(local, u)
    lifted = check_vector(lifted, local.size, "lifted")
    return seg.A @ lifted + alpha * (seg.B @ lifted)


def predict_bilinear(model, z0, controls):
    """Observation rollout of a (localized) bilinear model for real controls."""
    d = model.dictionary
    step = localized_step if isinstance(model, LocalizedBilinear) else bilinear_step
    psi = lift(d, check_vector(z0, d.obs_dim, "z0"))
    out = []
    for u in controls:
        psi = step(model, psi, u)
        out.append(project(d, psi))
    return out


def as_models(bank):
    """Accept a SwitchedBank or an iterable of KoopmanModels."""
    if isinstance(bank, SwitchedBank):
        return bank
    models = tuple(bank)
    if not all(isinstance(m, KoopmanModel) for m in models):
        raise TypeError("expected KoopmanModel instances")
    return SwitchedBank(models)
