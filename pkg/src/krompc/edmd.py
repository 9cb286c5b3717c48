"""Extended dynamic mode decomposition, batch and streaming.

Data matrices follow the column convention: ``Z`` and ``Ztilde`` have shape
``(q, m)`` with snapshot pair ``i`` in column ``i``.  The fitted operator is
stored as ``U_transpose`` so that ``psi(z_next) ~= U_transpose @ psi(z)``.

The scikit-learn style estimators at the bottom (:class:`EDMD`,
:class:`OnlineEDMD`) use the row convention ``X`` of shape
``(n_samples, q)`` instead.
"""

from dataclasses import dataclass, field, replace
from math import floor

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_columns, check_finite, check_positive_int, check_vector, frozen
from .dictionary import Dictionary, build_dictionary, lift, project

__all__ = [
    "DEFAULT_RTOL",
    "SnapshotSet",
    "KoopmanModel",
    "OnlineAccumulator",
    "pinv",
    "edmd_fit",
    "accumulator_from_snapshots",
    "online_update",
    "weight_from_fraction",
    "refit",
    "EDMD",
    "OnlineEDMD",
]

DEFAULT_RTOL = 1e-10


def pinv(M, rtol=DEFAULT_RTOL):
    """SVD pseudoinverse; singular values below ``rtol * sigma_max`` count as zero."""
    return np.linalg.pinv(M, rcond=rtol)


@dataclass(frozen=True)
class SnapshotSet:
    """Snapshot pairs ``(z_i, ztilde_i)`` at lag ``lag_time`` under a constant input.

    ``Z`` and ``Ztilde`` are ``(q, m)`` arrays, one pair per column.
    """

    Z: np.ndarray
    Ztilde: np.ndarray
    lag_time: float
    control_value: float
    obs_names: tuple = None

    def __post_init__(self):
        Z = check_finite(self.Z, "Z")
        if Z.ndim == 1:
            Z = Z[:, None]
        Zt = check_columns(self.Ztilde, Z.shape[0], "Ztilde")
        if Zt.shape != Z.shape:
            raise ValueError(f"Z {Z.shape} and Ztilde {Zt.shape} must have identical shape")
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise ValueError("snapshot set is empty")
        if not self.lag_time > 0:
            raise ValueError("lag_time must be positive")
        object.__setattr__(self, "Z", frozen(Z))
        object.__setattr__(self, "Ztilde", frozen(Zt))
        object.__setattr__(self, "lag_time", float(self.lag_time))
        object.__setattr__(self, "control_value", float(self.control_value))
        if self.obs_names is not None:
            object.__setattr__(self, "obs_names", tuple(self.obs_names))

    @property
    def obs_dim(self):
        return self.Z.shape[0]

    @property
    def n_pairs(self):
        return self.Z.shape[1]

    def subset(self, columns):
        """Snapshot set restricted to the given column indices."""
        columns = np.asarray(columns, dtype=int)
        return replace(self, Z=self.Z[:, columns], Ztilde=self.Ztilde[:, columns])

    def concat(self, other):
        if other.obs_dim != self.obs_dim or other.control_value != self.control_value:
            raise ValueError("can only concatenate snapshot sets with equal obs_dim and control value")
        if other.lag_time != self.lag_time:
            raise ValueError("lag times differ")
        return replace(
            self,
            Z=np.hstack([self.Z, other.Z]),
            Ztilde=np.hstack([self.Ztilde, other.Ztilde]),
        )


@dataclass(frozen=True)
class KoopmanModel:
    """Finite-dimensional Koopman approximation for one constant input."""

    dictionary: Dictionary
    lag_time: float
    control_value: float
    U_transpose: np.ndarray
    sample_count: int = 1

    def __post_init__(self):
        k = self.dictionary.size
        U = check_finite(self.U_transpose, "U_transpose")
        if U.shape != (k, k):
            raise ValueError(f"U_transpose must be {k}x{k}, got {U.shape}")
        object.__setattr__(self, "U_transpose", frozen(U))
        object.__setattr__(self, "lag_time", float(self.lag_time))
        object.__setattr__(self, "control_value", float(self.control_value))
        object.__setattr__(self, "sample_count", int(self.sample_count))
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def size(self):
        return self.dictionary.size

    def predict(self, z):
        """One-step prediction in observation space, ``P U^T psi(z)``."""
        return project(self.dictionary, self.U_transpose @ lift(self.dictionary, z))

    def to_dict(self):
        return {
            "dictionary": self.dictionary.to_dict(),
            "lag_time_h": self.lag_time,
            "control_value": self.control_value,
            "U_transpose": self.U_transpose.tolist(),
            "sample_count_m": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            Dictionary.from_dict(data["dictionary"]),
            data["lag_time_h"],
            data["control_value"],
            np.asarray(data["U_transpose"], dtype=float),
            data["sample_count_m"],
        )


@dataclass(frozen=True)
class OnlineAccumulator:
    """Running EDMD moments.

    ``A`` is the mean of ``psi(ztilde) psi(z)^T`` and ``G`` the mean Gram
    ``psi(z) psi(z)^T`` over ``m`` (effective) samples.  No raw data is kept.
    """

    dictionary: Dictionary
    A: np.ndarray
    G: np.ndarray
    m: int
    control_value: float
    lag_time: float = 1.0
    rtol: float = DEFAULT_RTOL

    def __post_init__(self):
        k = self.dictionary.size
        A = check_finite(self.A, "A")
        G = check_finite(self.G, "G")
        if A.shape != (k, k) or G.shape != (k, k):
            raise ValueError(f"A and G must be {k}x{k}")
        if np.max(np.abs(G - G.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(G))):
            raise ValueError("G must be symmetric")
        object.__setattr__(self, "A", frozen(A))
        object.__setattr__(self, "G", frozen(G))
        object.__setattr__(self, "m", check_positive_int(self.m, "m"))
        object.__setattr__(self, "control_value", float(self.control_value))


def _lifted_pairs(data, dictionary):
    if not isinstance(data, SnapshotSet):
        raise TypeError("data must be a SnapshotSet")
    if data.obs_dim != dictionary.obs_dim:
        raise ValueError(f"snapshot dimension {data.obs_dim} does not match dictionary obs_dim {dictionary.obs_dim}")
    return lift(dictionary, data.Z), lift(dictionary, data.Ztilde)


def edmd_fit(data, dictionary, rtol=DEFAULT_RTOL):
    """Least-squares Koopman matrix ``U^T = Psi_Ztilde Psi_Z^+``.

    Among all ``M`` minimizing ``||Psi_Ztilde - M Psi_Z||_F`` this is the one
    of minimum Frobenius norm.
    """
    PZ, PZt = _lifted_pairs(data, dictionary)
    U_T = PZt @ pinv(PZ, rtol)
    return KoopmanModel(dictionary, data.lag_time, data.control_value, U_T, data.n_pairs)


def accumulator_from_snapshots(data, dictionary, rtol=DEFAULT_RTOL):
    PZ, PZt = _lifted_pairs(data, dictionary)
    m = data.n_pairs
    A = PZt @ PZ.T / m
    G = PZ @ PZ.T / m
    G = 0.5 * (G + G.T)
    return OnlineAccumulator(dictionary, A, G, m, data.control_value, data.lag_time, rtol)


def online_update(acc, z_new, ztilde_new, weight_q=1):
    """Fold one snapshot pair into ``acc`` with integer weight ``weight_q``.

    ``A <- (m A + q psi(zt) psi(z)^T) / (m + q)``, likewise for ``G``, and
    ``m <- m + q``.  ``weight_q = 1`` reproduces batch EDMD.
    """
    q = check_positive_int(weight_q, "weight_q")
    d = acc.dictionary
    z_new = check_vector(z_new, d.obs_dim, "z_new")
    ztilde_new = check_vector(ztilde_new, d.obs_dim, "ztilde_new")
    pz = lift(d, z_new)
    pzt = lift(d, ztilde_new)
    m = acc.m
    A = (m * acc.A + q * np.outer(pzt, pz)) / (m + q)
    G = (m * acc.G + q * np.outer(pz, pz)) / (m + q)
    G = 0.5 * (G + G.T)
    return replace(acc, A=A, G=G, m=m + q)


def weight_from_fraction(m, epsilon):
    """Update weight giving a new sample roughly a fraction ``epsilon`` of the total.

    ``floor(m * epsilon / (1 - epsilon))``, never less than 1.
    """
    m = check_positive_int(m, "m")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return max(1, floor(m * epsilon / (1.0 - epsilon)))


def refit(acc):
    """Koopman model ``U^T = A G^+`` from the running moments."""
    if not (np.all(np.isfinite(acc.A)) and np.all(np.isfinite(acc.G))):
        raise ValueError("accumulator state is not finite")
    U_T = acc.A @ pinv(acc.G, acc.rtol)
    return KoopmanModel(acc.dictionary, acc.lag_time, acc.control_value, U_T, acc.m)


class EDMD(RegressorMixin, BaseEstimator):
    """EDMD regressor with a monomial dictionary.

    Parameters
    ----------
    degree : int
        Maximum monomial degree. ``degree=1`` is DMD plus a constant term.
    rtol : float
        Relative singular value cutoff of the pseudoinverse.
    lag_time, control_value : float
        Metadata copied onto the fitted :class:`KoopmanModel`.

    Notes
    -----
    ``fit(X, Y)`` takes row-major data, ``X[i]`` and ``Y[i]`` being a snapshot
    pair. ``predict`` is the one-step observation forecast.
    """

    def __init__(self, degree=2, rtol=DEFAULT_RTOL, lag_time=1.0, control_value=0.0):
        self.degree = degree
        self.rtol = rtol
        self.lag_time = lag_time
        self.control_value = control_value

    def fit(self, X, Y):
        X = check_array(X)
        Y = check_array(Y)
        if X.shape != Y.shape:
            raise ValueError("X and Y must have the same shape")
        self.dictionary_ = build_dictionary(X.shape[1], self.degree)
        data = SnapshotSet(X.T, Y.T, self.lag_time, self.control_value)
        self.model_ = edmd_fit(data, self.dictionary_, self.rtol)
        self.U_transpose_ = self.model_.U_transpose
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return lift(self.dictionary_, check_array(X).T).T

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.predict(X.T).T


class OnlineEDMD(EDMD):
    """EDMD refitted from running moments; supports ``partial_fit``.

    Parameters
    ----------
    epsilon : float or None
        If given, each new pair is weighted by :func:`weight_from_fraction`
        of the current count; otherwise every pair has weight 1.
    """

    def __init__(self, degree=2, rtol=DEFAULT_RTOL, lag_time=1.0, control_value=0.0, epsilon=None):
        super().__init__(degree=degree, rtol=rtol, lag_time=lag_time, control_value=control_value)
        self.epsilon = epsilon

    def fit(self, X, Y):
        X = check_array(X)
        Y = check_array(Y)
        if X.shape != Y.shape:
            raise ValueError("X and Y must have the same shape")
        self.dictionary_ = build_dictionary(X.shape[1], self.degree)
        self.n_features_in_ = X.shape[1]
        data = SnapshotSet(X.T, Y.T, self.lag_time, self.control_value)
        self.accumulator_ = accumulator_from_snapshots(data, self.dictionary_, self.rtol)
        return self._refit()

    def partial_fit(self, X, Y):
        if not hasattr(self, "accumulator_"):
            return self.fit(X, Y)
        X = check_array(X)
        Y = check_array(Y)
        acc = self.accumulator_
        for x, y in zip(X, Y):
            q = 1 if self.epsilon is None else weight_from_fraction(acc.m, self.epsilon)
            acc = online_update(acc, x, y, q)
        self.accumulator_ = acc
        return self._refit()

    def _refit(self):
        self.model_ = refit(self.accumulator_)
        self.U_transpose_ = self.model_.U_transpose
        return self
