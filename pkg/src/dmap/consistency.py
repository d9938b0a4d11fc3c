"""Inter-class relationship extraction, the consistency measure, and
semantic-space pre-inspection.

The central objects are the relationship matrices ``R_x`` and ``R_k``:
column ``i`` of each holds the ridge coefficients expressing unseen
class ``i`` over the *seen* prototypes, computed in feature space
(``R_x``, from prototypes ``X~_s``) and in semantic space (``R_k``,
from embeddings ``K_s``).  The two manifolds are consistent when
``X~_s R_x = X~_s R_k`` — the same seen classes explain each unseen
class the same way in both spaces.

Pre-inspection checks a structural defect of the semantic space itself:
two unseen embeddings whose orthogonal projections onto span(K_s)
coincide produce identical scores under *any* linear map learned from
seen data, so no such map can tell them apart.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import PrototypeSet, as_array, _freeze
from .errors import DimensionMismatch, SingularSystem, ValidationError

logger = logging.getLogger(__name__)

#: Norms below this are treated as degenerate in the consistency measure.
DEGENERATE_NORM = 1e-12

#: Default relative factor for the pre-inspection threshold.
RELATIVE_EPSILON = 1e-6


@dataclass(frozen=True)
class RelationshipMatrix:
    """``k x l`` ridge coefficients of unseen classes over seen prototypes."""

    data: np.ndarray
    lam: float
    source_space: str  # "feature" or "semantic"

    def __post_init__(self):
        data = _freeze(np.atleast_2d(as_array(self.data)))
        if not np.all(np.isfinite(data)):
            raise ValidationError("relationship matrix contains non-finite entries")
        if self.source_space not in ("feature", "semantic"):
            raise ValidationError(f"unknown source space {self.source_space!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "lam", float(self.lam))


@dataclass(frozen=True)
class ProjectionDecomposition:
    """Split of an embedding into its span(K_s) part and the orthogonal rest.

    ``u`` is the orthogonal projection onto the span of the seen
    embeddings, ``v = k_u - u`` the residual, and ``alpha`` the
    minimum-norm coefficients with ``u = K_s alpha``.
    """

    u: np.ndarray
    v: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _freeze(np.asarray(self.u, dtype=np.float64)))
        object.__setattr__(self, "v", _freeze(np.asarray(self.v, dtype=np.float64)))
        object.__setattr__(self, "alpha", _freeze(np.asarray(self.alpha, dtype=np.float64)))


@dataclass(frozen=True)
class DefectReport:
    """Pairwise projection distances between unseen classes plus the
    pairs indistinguishable at the chosen threshold."""

    pairwise_distances: np.ndarray  # l x l, symmetric, zero diagonal
    flagged_pairs: tuple  # of (class_i, class_j, distance)
    epsilon: float
    class_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "pairwise_distances", _freeze(self.pairwise_distances))
        object.__setattr__(self, "flagged_pairs", tuple(self.flagged_pairs))
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "epsilon", float(self.epsilon))


def extract_relationship(seen_prototypes, target, lam: float) -> np.ndarray:
    """Ridge coefficients of one target vector over the seen prototypes.

    Solves ``argmin_a ||target - P a||^2 + lam ||a||^2`` for the
    prototype matrix ``P`` (``dim x k``), i.e.
    ``a = (P^T P + lam I)^-1 P^T target``.

    Raises
    ------
    SingularSystem
        When ``lam = 0`` and ``P^T P`` is singular.
    """
    P = as_array(seen_prototypes)
    t = np.asarray(as_array(target), dtype=np.float64).reshape(-1)
    if P.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"prototypes have dim {P.shape[0]}, target has dim {t.shape[0]}")
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    gram = P.T @ P + lam * np.eye(P.shape[1])
    try:
        cho = scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(
            f"seen-prototype Gram is singular with lambda={lam}: {exc}"
        ) from exc
    return scipy.linalg.cho_solve(cho, P.T @ t)


def build_relationship_matrix(
    seen_prototypes, unseen_prototypes, lam: float, *, source_space: str | None = None
) -> RelationshipMatrix:
    """Stack :func:`extract_relationship` over every unseen prototype column.

    ``source_space`` tags where the prototypes live; when omitted it is
    inferred: prototype sets are tagged ``feature``, anything else
    (embedding matrices, raw arrays of embeddings) ``semantic`` only when
    it carries class ids without being a prototype set.
    """
    P = as_array(seen_prototypes)
    U = as_array(unseen_prototypes)
    if P.shape[0] != U.shape[0]:
        raise DimensionMismatch(
            f"seen prototypes have dim {P.shape[0]}, unseen have dim {U.shape[0]}"
        )
    if source_space is None:
        is_embedding = hasattr(seen_prototypes, "class_ids") and not isinstance(
            seen_prototypes, PrototypeSet
        )
        source_space = "semantic" if is_embedding else "feature"
    cols = [extract_relationship(P, U[:, i], lam) for i in range(U.shape[1])]
    return RelationshipMatrix(np.stack(cols, axis=1), lam, source_space)


def consistency_measure(seen_prototypes, R_x: RelationshipMatrix, R_k: RelationshipMatrix) -> float:
    """Scalar in (0, 1] quantifying inter-class relationship consistency.

    For each unseen class ``i`` with relationship images
    ``a_i = X~_s alpha_i`` and ``b_i = X~_s beta_i``, the per-class term is
    ``exp(-||a_i - b_i|| / (||a_i|| * ||b_i||))`` and the measure is the
    mean over unseen classes.  The denominator is the *product* of the
    two norms, exactly as defined.

    Degenerate norms (below ``1e-12``) are handled by convention: both
    degenerate gives a term of 1 (identical degenerate images), exactly
    one degenerate gives 0 (maximal inconsistency); both cases are logged.
    """
    P = as_array(seen_prototypes)
    Rx, Rk = as_array(R_x), as_array(R_k)
    if Rx.shape != Rk.shape:
        raise DimensionMismatch(f"relationship shapes differ: {Rx.shape} vs {Rk.shape}")
    if P.shape[1] != Rx.shape[0]:
        raise DimensionMismatch(
            f"{P.shape[1]} seen prototypes but relationship matrices have {Rx.shape[0]} rows"
        )
    img_x = P @ Rx
    img_k = P @ Rk
    terms = np.empty(Rx.shape[1])
    for i in range(Rx.shape[1]):
        na = np.linalg.norm(img_x[:, i])
        nb = np.linalg.norm(img_k[:, i])
        if na < DEGENERATE_NORM and nb < DEGENERATE_NORM:
            logger.warning("consistency term %d: both images degenerate, counting as 1", i)
            terms[i] = 1.0
        elif na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
            logger.warning("consistency term %d: one image degenerate, counting as 0", i)
            terms[i] = 0.0
        else:
            terms[i] = np.exp(-np.linalg.norm(img_x[:, i] - img_k[:, i]) / (na * nb))
    return float(terms.mean())


def irc_gap(seen_prototypes, R_x: RelationshipMatrix, R_k: RelationshipMatrix) -> float:
    """Relative Frobenius gap ``||X~_s R_x - X~_s R_k|| / ||X~_s R_k||``.

    Zero exactly when the inter-class relationships agree; the
    denominator is floored at the smallest positive normal double.
    """
    P = as_array(seen_prototypes)
    Rx, Rk = as_array(R_x), as_array(R_k)
    if Rx.shape != Rk.shape:
        raise DimensionMismatch(f"relationship shapes differ: {Rx.shape} vs {Rk.shape}")
    ref = np.linalg.norm(P @ Rk)
    return float(np.linalg.norm(P @ Rx - P @ Rk) / max(ref, np.finfo(np.float64).tiny))


def project_onto_seen_span(K_s, k_u) -> ProjectionDecomposition:
    """Orthogonal projection of one embedding onto the span of the seen ones.

    Uses the minimum-norm least-squares solution, so rank-deficient seen
    embeddings are handled; the projection ``u`` itself is unique either
    way.
    """
    Ks = as_array(K_s)
    t = np.asarray(as_array(k_u), dtype=np.float64).reshape(-1)
    if Ks.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"embeddings have dim {Ks.shape[0]}, target has dim {t.shape[0]}")
    alpha, *_ = np.linalg.lstsq(Ks, t, rcond=None)
    u = Ks @ alpha
    return ProjectionDecomposition(u=u, v=t - u, alpha=alpha)


def preinspect(K_s, K_u, epsilon: float | None = None, *, class_ids=None) -> DefectReport:
    """Scan the unseen classes for pairs a seen-trained linear map cannot separate.

    Each unseen embedding is projected onto span(K_s); the report holds
    the ``l x l`` matrix of Euclidean distances between those projections
    and flags every pair ``i < j`` with distance at most ``epsilon``.

    When ``epsilon`` is omitted it defaults to ``1e-6`` times the median
    off-diagonal distance — the flag is then scale-free.  Pass an
    absolute value to override.
    """
    Ks, Ku = as_array(K_s), as_array(K_u)
    if Ks.shape[0] != Ku.shape[0]:
        raise DimensionMismatch(
            f"seen embeddings have dim {Ks.shape[0]}, unseen have dim {Ku.shape[0]}"
        )
    if class_ids is None:
        if hasattr(K_u, "class_ids"):
            class_ids = K_u.class_ids
        else:
            class_ids = tuple(f"u{j:04d}" for j in range(Ku.shape[1]))
    l = Ku.shape[1]
    projections = np.stack(
        [project_onto_seen_span(Ks, Ku[:, j]).u for j in range(l)], axis=1
    )
    dist = np.zeros((l, l))
    for i in range(l):
        for j in range(i + 1, l):
            dist[i, j] = dist[j, i] = np.linalg.norm(projections[:, i] - projections[:, j])
    if epsilon is None:
        off_diag = dist[np.triu_indices(l, k=1)]
        median = float(np.median(off_diag)) if off_diag.size else 0.0
        epsilon = RELATIVE_EPSILON * median
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    flagged = tuple(
        (class_ids[i], class_ids[j], float(dist[i, j]))
        for i in range(l)
        for j in range(i + 1, l)
        if dist[i, j] <= epsilon
    )
    return DefectReport(
        pairwise_distances=dist,
        flagged_pairs=flagged,
        epsilon=float(epsilon),
        class_ids=tuple(class_ids),
    )
