"""Monomial observable dictionaries.

A :class:`Dictionary` lifts an observation ``z`` in ``R^q`` to the vector of
all monomials of total degree ``<= d``.  The constant monomial comes first,
followed by the degree-1 monomials in variable order, so projecting back to
the observation is a fixed slice.  Higher degrees follow in graded
lexicographic order.
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_finite

__all__ = [
    "Dictionary",
    "build_dictionary",
    "lift",
    "project",
    "monomial_exponents",
    "MonomialLifting",
]


def monomial_exponents(obs_dim, max_degree):
    """Exponent tuples of all monomials in `obs_dim` variables up to `max_degree`.

    Ordered by degree; within a degree, exponent tuples are in descending
    lexicographic order (``z1^2, z1 z2, z2^2`` for two variables).
    """
    exps = []
    for degree in range(max_degree + 1):
        for combo in combinations_with_replacement(range(obs_dim), degree):
            e = [0] * obs_dim
            for var in combo:
                e[var] += 1
            exps.append(tuple(e))
    return tuple(exps)


@dataclass(frozen=True)
class Dictionary:
    """Ordered monomial basis over a ``obs_dim``-dimensional observation.

    Parameters
    ----------
    obs_dim : int
        Number of observed quantities ``q``.
    max_degree : int
        Maximum total monomial degree ``d``.
    exponents : tuple of tuple of int, optional
        Custom (thinned) basis. Must start with the constant monomial and,
        if ``max_degree >= 1``, continue with the ``q`` degree-1 monomials.
        Defaults to the full graded-lexicographic basis.
    """

    obs_dim: int
    max_degree: int
    exponents: tuple = None
    _powers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.obs_dim, bool) or int(self.obs_dim) != self.obs_dim or self.obs_dim < 1:
            raise ValueError(f"obs_dim must be a positive integer, got {self.obs_dim!r}")
        if int(self.max_degree) != self.max_degree or self.max_degree < 0:
            raise ValueError(f"max_degree must be a non-negative integer, got {self.max_degree!r}")
        object.__setattr__(self, "obs_dim", int(self.obs_dim))
        object.__setattr__(self, "max_degree", int(self.max_degree))
        if self.exponents is None:
            exps = monomial_exponents(self.obs_dim, self.max_degree)
        else:
            exps = tuple(tuple(int(v) for v in e) for e in self.exponents)
            self._check_custom(exps)
        object.__setattr__(self, "exponents", exps)
        powers = np.array(exps, dtype=float).reshape(len(exps), self.obs_dim)
        powers.setflags(write=False)
        object.__setattr__(self, "_powers", powers)

    def _check_custom(self, exps):
        q, d = self.obs_dim, self.max_degree
        if not exps:
            raise ValueError("exponents must not be empty")
        for e in exps:
            if len(e) != q or min(e) < 0 or sum(e) > d:
                raise ValueError(f"invalid exponent tuple {e} for q={q}, d={d}")
        if len(set(exps)) != len(exps):
            raise ValueError("exponents contain duplicates")
        if exps[0] != (0,) * q:
            raise ValueError("first monomial must be the constant")
        if d >= 1:
            linear = tuple(tuple(int(i == j) for j in range(q)) for i in range(q))
            if exps[1:q + 1] != linear:
                raise ValueError("entries 2..q+1 must be the degree-1 monomials in variable order")

    @property
    def size(self):
        """Number of basis functions ``k``."""
        return len(self.exponents)

    def to_dict(self):
        return {
            "obs_dim": self.obs_dim,
            "max_degree": self.max_degree,
            "exponents": [list(e) for e in self.exponents],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["obs_dim"], data["max_degree"], tuple(map(tuple, data["exponents"])))


def build_dictionary(obs_dim, max_degree):
    """Full monomial dictionary with ``C(obs_dim + max_degree, max_degree)`` entries."""
    d = Dictionary(obs_dim, max_degree)
    assert d.size == comb(obs_dim + max_degree, max_degree)
    return d


def lift(dictionary, z):
    """Evaluate the dictionary at ``z``.

    ``z`` is either a single observation of shape ``(q,)`` (returns ``(k,)``)
    or a data matrix of shape ``(q, m)`` with one observation per column
    (returns ``(k, m)``).
    """
    z = check_finite(z, "observation")
    q = dictionary.obs_dim
    if z.shape[0] != q or z.ndim not in (1, 2):
        raise ValueError(f"observation must have leading dimension {q}, got shape {z.shape}")
    P = dictionary._powers
    if z.ndim == 1:
        return np.prod(z[None, :] ** P, axis=1)
    return np.prod(z[None, :, :] ** P[:, :, None], axis=1)


def project(dictionary, lifted):
    """Recover the observation from a lifted vector (or ``(k, m)`` matrix)."""
    if dictionary.max_degree < 1:
        raise ValueError("a degree-0 dictionary has no degree-1 coordinates to project onto")
    lifted = np.asarray(lifted, dtype=float)
    if lifted.shape[0] != dictionary.size:
        raise ValueError(f"lifted vector must have leading dimension {dictionary.size}, got {lifted.shape}")
    return lifted[1:dictionary.obs_dim + 1].copy()


class MonomialLifting(TransformerMixin, BaseEstimator):
    """scikit-learn transformer wrapping :func:`lift` / :func:`project`.

    Works on row-major data ``X`` of shape ``(n_samples, q)``.
    """

    def __init__(self, degree=2):
        self.degree = degree

    def fit(self, X, y=None):
        X = check_array(X)
        self.dictionary_ = build_dictionary(X.shape[1], self.degree)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_array(X)
        return lift(self.dictionary_, X.T).T

    def inverse_transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_array(X)
        return project(self.dictionary_, X.T).T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "dictionary_")
        if input_features is None:
            input_features = [f"z{i}" for i in range(self.n_features_in_)]
        names = []
        for e in self.dictionary_.exponents:
            terms = [f"{v}^{p}" if p > 1 else v for v, p in zip(input_features, e) if p]
            names.append(" ".join(terms) if terms else "1")
        return np.asarray(names, dtype=object)
