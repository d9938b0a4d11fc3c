"""Closed-form learning of linear visual-semantic maps.

The map ``f(x) = V^T x`` is fit by minimising

    ||X^T V K - Y||_F^2 + gamma ||V K||_F^2 + eta ||X^T V||_F^2
        + gamma * eta * ||V||_F^2

over ``V`` (``d x p``), where ``X`` is ``d x n`` (instances in columns),
``K`` is ``p x k`` (class embeddings in columns) and ``Y`` is the
``n x k`` {-1,+1} label matrix.  Setting the gradient to zero gives

    (X X^T + gamma I) V (K K^T + eta I) = X Y K^T,

so the minimiser is obtained exactly from two symmetric positive-definite
solves — no iterative optimisation is involved.

Each solve factorises whichever Gram matrix of its side is smaller,
using the push-through identity ``(B B^T + rI)^-1 B = B (B^T B + rI)^-1``.
Besides the size these forms differ numerically: when ``K`` has fewer
columns than rows, ``K K^T + eta I`` carries null-space eigenvalues equal
to ``eta``, and solving against it amplifies any rounding noise present
in the right-hand side by ``1/eta`` along directions outside span(K).
The ``K^T K + eta I`` form never touches those directions — the result
is a combination of columns of ``K`` by construction — which keeps
``V^T x`` inside span(K) to machine precision, exactly as the algebra
says it must be.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import as_array, _freeze
from .errors import DimensionMismatch, SingularSystem, ValidationError

logger = logging.getLogger(__name__)

#: Gram matrices with estimated condition above this are refused.
COND_LIMIT = 1e12


@dataclass(frozen=True)
class MapMatrix:
    """Parameter of a learned linear map ``f(x) = V^T x``.

    ``data`` is ``d x p``: rows index the input (feature) space, columns
    index the output (embedding) space.  The regularisers used to fit
    the map are kept for provenance.
    """

    data: np.ndarray
    gamma: float
    eta: float

    def __post_init__(self):
        data = _freeze(np.atleast_2d(as_array(self.data)))
        if not np.all(np.isfinite(data)):
            raise ValidationError("map matrix contains non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


def _spd_cholesky(gram: np.ndarray, reg: float, what: str, cond_limit: float):
    """Factor ``gram + reg*I`` after a conditioning check."""
    A = gram + reg * np.eye(gram.shape[0])
    # Symmetric eigenvalues give the exact 2-norm condition number at
    # these sizes; an ill-conditioned Gram matrix means the closed form
    # would amplify noise by ~cond, so refuse rather than return junk.
    try:
        eigs = np.abs(scipy.linalg.eigvalsh(A))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise SingularSystem(f"{what}: eigenvalue estimation failed: {exc}") from exc
    lo, hi = eigs.min(), eigs.max()
    cond = np.inf if lo == 0.0 else hi / lo
    if cond > cond_limit:
        raise SingularSystem(
            f"{what} has condition ~{cond:.3g} (limit {cond_limit:.3g}); "
            "increase the regulariser"
        )
    try:
        return scipy.linalg.cho_factor(A, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(f"{what}: Cholesky factorisation failed: {exc}") from exc


def solve_ridge_map(X, K, Y, gamma: float, eta: float, *, cond_limit: float = COND_LIMIT) -> MapMatrix:
    """Exact minimiser of the doubly regularised ridge objective.

    Parameters
    ----------
    X : FeatureMatrix or array_like, shape (d, n)
    K : EmbeddingMatrix or array_like, shape (p, k)
    Y : LabelMatrix or array_like, shape (n, k)
    gamma, eta : float
        Nonnegative regularisers on the feature-side and embedding-side
        Gram matrices respectively.
    cond_limit : float, optional
        Condition-number threshold above which the system is refused.

    Returns
    -------
    MapMatrix
        ``V = (X X^T + gamma I)^-1 X Y K^T (K K^T + eta I)^-1``.

    Raises
    ------
    SingularSystem
        If either regularised Gram matrix is ill-conditioned beyond
        ``cond_limit`` or fails to factorise.
    """
    X, K, Y = as_array(X), as_array(K), as_array(Y)
    if gamma < 0 or eta < 0:
        raise ValidationError("gamma and eta must be nonnegative")
    if X.shape[1] != Y.shape[0] or K.shape[1] != Y.shape[1]:
        raise DimensionMismatch(
            f"X is {X.shape}, K is {K.shape}, Y is {Y.shape}: "
            "need X columns == Y rows and K columns == Y columns"
        )
    p, k = K.shape
    d, n = X.shape
    # Feature side first: T = (X X^T + gamma I)^-1 X Y, shape d x k.
    if d <= n:
        cho_x = _spd_cholesky(X @ X.T, gamma, "feature Gram X X^T", cond_limit)
        T = scipy.linalg.cho_solve(cho_x, X @ Y)
    else:
        cho_x = _spd_cholesky(X.T @ X, gamma, "feature Gram X^T X", cond_limit)
        T = X @ scipy.linalg.cho_solve(cho_x, Y)
    # Embedding side: V = T K^T (K K^T + eta I)^-1.  In the k < p case the
    # solve happens before the final multiplication, so V's embedding-side
    # rows are combinations of K's columns by construction and the
    # feature-side solve's rounding cannot escape span(K).
    if p <= k:
        cho_k = _spd_cholesky(K @ K.T, eta, "embedding Gram K K^T", cond_limit)
        V = scipy.linalg.cho_solve(cho_k, (T @ K.T).T).T
    else:
        cho_k = _spd_cholesky(K.T @ K, eta, "embedding Gram K^T K", cond_limit)
        V = T @ scipy.linalg.cho_solve(cho_k, K.T)
    return MapMatrix(V, gamma, eta)


def predict_semantic(map_matrix: MapMatrix, X) -> np.ndarray:
    """Apply the map to every column: returns ``V^T X`` with shape (p, n)."""
    X = as_array(X)
    if map_matrix.d != X.shape[0]:
        raise DimensionMismatch(
            f"map expects {map_matrix.d}-dimensional features, got {X.shape[0]}"
        )
    return map_matrix.data.T @ X


def ridge_objective(V, X, K, Y, gamma: float, eta: float) -> float:
    """Objective value at ``V`` (used by tests and diagnostics)."""
    V, X, K, Y = as_array(V), as_array(X), as_array(K), as_array(Y)
    fit = X.T @ V @ K - Y
    return float(
        np.sum(fit * fit)
        + gamma * np.sum((V @ K) ** 2)
        + eta * np.sum((X.T @ V) ** 2)
        + gamma * eta * np.sum(V * V)
    )


def stationarity_residual(V, X, K, Y, gamma: float, eta: float) -> np.ndarray:
    """Gradient of the objective at ``V``; identically zero at the minimiser."""
    V, X, K, Y = as_array(V), as_array(X), as_array(K), as_array(Y)
    return (
        2.0 * X @ (X.T @ V @ K - Y) @ K.T
        + 2.0 * gamma * V @ (K @ K.T)
        + 2.0 * eta * (X @ X.T) @ V
        + 2.0 * gamma * eta * V
    )
