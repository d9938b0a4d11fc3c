"""The dual-path zero-shot recogniser: training with iterative prototype
refinement, plus inductive and transductive inference.

Training (two mapping paths)
----------------------------
1. Learn ``f_s`` mapping features into the given semantic space ``K_s``
   by the closed-form ridge solve.
2. Build a second, feature-homogeneous embedding space ``K~_s``: the
   column for each seen class is the average of the ``m`` training
   features whose ``f_s`` predictions fall nearest the class embedding.
3. Alternate — learn ``f~_s`` against ``K~_s``, then rebuild ``K~_s``
   from the new predictions — until the prototypes stop moving or the
   iteration cap is hit.

Inference
---------
*Inductive*: score every candidate class by the inner product
``<f_s(x), k_c>`` and take the argmax.

*Transductive*: the whole test batch is used to build unseen-class
prototypes ``K~_u`` in feature space (the "jump-start"): iteration 1
anchors at the given unseen embeddings and searches among ``f_s``
predictions; later iterations re-anchor at the current prototypes and
search among ``f~_s`` predictions.  Scoring always uses
``<f~_s(x), k~_c>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    KNN_AVERAGE,
    FeatureMatrix,
    LabeledDataset,
    PrototypeSet,
    as_array,
    build_label_matrix,
    center_columns,
    default_instance_ids,
    l2_normalize_columns,
)
from .errors import (
    DimensionMismatch,
    EmptyTestSet,
    EmptyTrainingSet,
    ValidationError,
)
from .linmap import MapMatrix, predict_semantic, solve_ridge_map

logger = logging.getLogger(__name__)

CZSR = "czsr"
GZSR = "gzsr"

#: Default ridge regularisers, the midpoints (in log space) of the ranges
#: that work well for CNN features with attribute/word-vector embeddings.
DEFAULT_GAMMA = 10.0 ** 1.35
DEFAULT_ETA = 10.0 ** 4.8


@dataclass(frozen=True)
class DmapConfig:
    """Hyper-parameters for training and inference.

    Attributes
    ----------
    m : int
        Neighbour count for prototype construction.
    lam : float
        Ridge regulariser for relationship extraction (consistency
        diagnostics carried in reports).
    gamma, eta : float
        Ridge regularisers of both mapping paths.
    train_max_iter : int
        Refinement iterations after the initial prototype construction;
        0 keeps the initial prototypes.
    test_max_iter : int
        Default transductive refinement iterations.
    convergence_tol : float
        Relative Frobenius change of the prototypes below which
        refinement stops early.
    mode : str
        ``"czsr"`` scores unseen candidates only; ``"gzsr"`` scores seen
        and unseen candidates together.
    normalize : bool
        L2-normalise feature and embedding columns before use.
    center : bool
        Subtract the training-feature mean before use (the same mean is
        re-applied at test time).
    """

    m: int = 100
    lam: float = 1e-4
    gamma: float = DEFAULT_GAMMA
    eta: float = DEFAULT_ETA
    train_max_iter: int = 2
    test_max_iter: int = 2
    convergence_tol: float = 1e-4
    mode: str = CZSR
    normalize: bool = False
    center: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("m must be at least 1")
        if self.lam < 0 or self.gamma < 0 or self.eta < 0:
            raise ValidationError("regularisers must be nonnegative")
        if self.train_max_iter < 0 or self.test_max_iter < 0:
            raise ValidationError("iteration caps must be nonnegative")
        if self.convergence_tol <= 0:
            raise ValidationError("convergence_tol must be positive")
        if self.mode not in (CZSR, GZSR):
            raise ValidationError(f"mode must be {CZSR!r} or {GZSR!r}, got {self.mode!r}")


@dataclass(frozen=True)
class DmapModel:
    """Trained dual-path model.

    ``f_s`` maps features to the given semantic space (d x p); ``f_tilde``
    maps features to the constructed space (d x d); ``k_tilde_s`` holds the
    refined seen-class prototypes in feature dimension.  ``feature_mean``
    is stored only when ``config.center`` is set, so the identical shift
    can be applied at test time.
    """

    f_s: MapMatrix
    f_tilde: MapMatrix
    k_tilde_s: PrototypeSet
    train_iterations_run: int
    config: DmapConfig
    feature_mean: np.ndarray | None = None

    def __post_init__(self):
        if self.f_tilde.p != self.k_tilde_s.data.shape[0]:
            raise ValidationError(
                f"second path maps into dim {self.f_tilde.p} but refined prototypes "
                f"have dim {self.k_tilde_s.data.shape[0]}"
            )


@dataclass(frozen=True)
class Prediction:
    """Per-instance decisions plus the full score table that produced them."""

    instance_ids: tuple
    predicted_class: tuple
    score_matrix: np.ndarray  # candidates x instances
    candidate_ids: tuple

    def __post_init__(self):
        scores = np.atleast_2d(as_array(self.score_matrix))
        object.__setattr__(self, "instance_ids", tuple(self.instance_ids))
        object.__setattr__(self, "predicted_class", tuple(self.predicted_class))
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        scores = scores.copy()
        scores.setflags(write=False)
        object.__setattr__(self, "score_matrix", scores)
        if scores.shape != (len(self.candidate_ids), len(self.instance_ids)):
            raise DimensionMismatch(
                f"score matrix {scores.shape} does not match "
                f"{len(self.candidate_ids)} candidates x {len(self.instance_ids)} instances"
            )


def knn_prototype(class_anchor, predictions, features, m: int) -> np.ndarray:
    """Average the features whose predictions are nearest a class anchor.

    Neighbours are found by Euclidean distance between ``class_anchor``
    and the columns of ``predictions``; the returned vector is the
    arithmetic mean of the *corresponding* columns of ``features`` —
    search happens in the prediction space, averaging in feature space.

    Ties in distance are broken toward the lower instance index, and
    ``m`` larger than the instance count is clamped (with a warning).
    """
    anchor = np.asarray(as_array(class_anchor), dtype=np.float64).reshape(-1)
    P = as_array(predictions)
    X = as_array(features)
    if P.shape[0] != anchor.shape[0]:
        raise DimensionMismatch(
            f"anchor has dim {anchor.shape[0]} but predictions have dim {P.shape[0]}"
        )
    if P.shape[1] != X.shape[1]:
        raise DimensionMismatch(
            f"{P.shape[1]} predictions for {X.shape[1]} feature columns"
        )
    if m < 1:
        raise ValidationError("m must be at least 1")
    n = P.shape[1]
    if m > n:
        logger.warning("m=%d exceeds the %d available instances; clamping", m, n)
        m = n
    diff = P - anchor[:, None]
    sq_dist = np.sum(diff * diff, axis=0)
    # Stable argsort on the distances == sort by (distance, index).
    nearest = np.argsort(sq_dist, kind="stable")[:m]
    # Average in ascending index order so the result depends only on the
    # selected *set* (float summation is order-sensitive); in particular
    # m = n reproduces the plain column mean bit for bit.
    return X[:, np.sort(nearest)].mean(axis=1)


def _refine_prototypes(anchors: np.ndarray, predictions: np.ndarray,
                       features: np.ndarray, m: int) -> np.ndarray:
    """One prototype per anchor column; see :func:`knn_prototype`."""
    cols = [
        knn_prototype(anchors[:, i], predictions, features, m)
        for i in range(anchors.shape[1])
    ]
    return np.stack(cols, axis=1)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    ref = np.linalg.norm(old)
    return float(np.linalg.norm(new - old) / max(ref, np.finfo(np.float64).tiny))


def _prepare_features(X: np.ndarray, config: DmapConfig,
                      mean: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    if config.center:
        X, mean = center_columns(X, mean)
    if config.normalize:
        X = l2_normalize_columns(X)
    return X, mean


def train(dataset: LabeledDataset, config: DmapConfig) -> DmapModel:
    """Fit both mapping paths and the refined seen-class prototypes.

    Steps: learn ``f_s`` against the seen embeddings; construct the
    refined prototypes ``K~_s`` from its predictions; then up to
    ``train_max_iter`` times re-learn ``f~_s`` against the current
    prototypes and rebuild the prototypes from its predictions, stopping
    early once the relative Frobenius change of ``K~_s`` falls below
    ``convergence_tol``.  The returned ``f~_s`` is always fit against
    the final prototypes.
    """
    if dataset.features.n < 1 or len(dataset.labels) < 1:
        raise EmptyTrainingSet("no training instances")
    X, feature_mean = _prepare_features(dataset.features.data, config, None)
    K_seen = dataset.semantic.subset(dataset.split.seen).data
    if config.normalize:
        K_seen = l2_normalize_columns(K_seen)
    Y = build_label_matrix(dataset.labels, dataset.split.seen)

    f_s = solve_ridge_map(X, K_seen, Y, config.gamma, config.eta)
    preds = predict_semantic(f_s, X)
    k_tilde = _refine_prototypes(K_seen, preds, X, config.m)

    iterations_run = 0
    for _ in range(config.train_max_iter):
        f_tilde = solve_ridge_map(X, k_tilde, Y, config.gamma, config.eta)
        preds_tilde = predict_semantic(f_tilde, X)
        refined = _refine_prototypes(k_tilde, preds_tilde, X, config.m)
        delta = _relative_change(refined, k_tilde)
        k_tilde = refined
        iterations_run += 1
        if delta < config.convergence_tol:
            break
    f_tilde = solve_ridge_map(X, k_tilde, Y, config.gamma, config.eta)

    return DmapModel(
        f_s=f_s,
        f_tilde=f_tilde,
        k_tilde_s=PrototypeSet(k_tilde, dataset.split.seen, source=KNN_AVERAGE),
        train_iterations_run=iterations_run,
        config=config,
        feature_mean=feature_mean,
    )


def _score_and_predict(candidates: np.ndarray, candidate_ids: tuple,
                       predictions: np.ndarray, instance_ids: tuple) -> Prediction:
    """Inner-product scores; argmax ties resolve to the lower candidate index."""
    scores = candidates.T @ predictions
    winners = np.argmax(scores, axis=0)
    return Prediction(
        instance_ids=instance_ids,
        predicted_class=tuple(candidate_ids[j] for j in winners),
        score_matrix=scores,
        candidate_ids=candidate_ids,
    )


def _test_arrays(model: DmapModel, X_test) -> tuple[np.ndarray, tuple]:
    if isinstance(X_test, FeatureMatrix):
        ids = X_test.instance_ids
        X = X_test.data
    else:
        X = as_array(X_test)
        ids = default_instance_ids(X.shape[1])
    if X.shape[1] < 1:
        raise EmptyTestSet("no test instances")
    X, _ = _prepare_features(X, model.config, model.feature_mean)
    return X, ids


def infer_inductive(model: DmapModel, X_test, K_unseen,
                    K_seen=None, mode: str | None = None) -> Prediction:
    """Classify by inner product between ``f_s`` predictions and embeddings.

    Candidates are the unseen classes alone (``czsr``) or seen followed
    by unseen (``gzsr``, which requires ``K_seen``).
    """
    mode = model.config.mode if mode is None else mode
    if mode not in (CZSR, GZSR):
        raise ValidationError(f"mode must be {CZSR!r} or {GZSR!r}, got {mode!r}")
    X, instance_ids = _test_arrays(model, X_test)
    Ku = as_array(K_unseen)
    unseen_ids = tuple(getattr(K_unseen, "class_ids", None) or
                       (f"u{j:04d}" for j in range(Ku.shape[1])))
    if mode == GZSR:
        if K_seen is None:
            raise ValidationError("gzsr inference needs the seen embeddings")
        Ks = as_array(K_seen)
        seen_ids = tuple(getattr(K_seen, "class_ids", None) or
                         (f"s{j:04d}" for j in range(Ks.shape[1])))
        if Ks.shape[0] != Ku.shape[0]:
            raise DimensionMismatch(
                f"seen embeddings have dim {Ks.shape[0]}, unseen have dim {Ku.shape[0]}"
            )
        candidates = np.concatenate([Ks, Ku], axis=1)
        candidate_ids = seen_ids + unseen_ids
    else:
        candidates = Ku
        candidate_ids = unseen_ids
    if model.config.normalize:
        candidates = l2_normalize_columns(candidates)
    preds = predict_semantic(model.f_s, X)
    if candidates.shape[0] != preds.shape[0]:
        raise DimensionMismatch(
            f"candidate embeddings have dim {candidates.shape[0]} but the map "
            f"produces dim {preds.shape[0]}"
        )
    return _score_and_predict(candidates, candidate_ids, preds, instance_ids)


def infer_transductive(model: DmapModel, X_test, K_unseen,
                       mode: str | None = None,
                       iterations: int | None = None) -> tuple[Prediction, PrototypeSet]:
    """Batch inference with transductively constructed unseen prototypes.

    Iteration 1 builds each unseen prototype from the ``m`` test features
    whose ``f_s`` predictions lie nearest the class embedding; iterations
    2+ re-anchor at the current prototypes and search among ``f~_s``
    predictions.  The final prototypes score the batch via
    ``<f~_s(x), k~_c>`` (against the refined seen prototypes too under
    ``gzsr``).

    Returns the prediction and the constructed unseen ``PrototypeSet``.
    """
    mode = model.config.mode if mode is None else mode
    if mode not in (CZSR, GZSR):
        raise ValidationError(f"mode must be {CZSR!r} or {GZSR!r}, got {mode!r}")
    iterations = model.config.test_max_iter if iterations is None else iterations
    if iterations < 1:
        raise ValidationError("transductive inference needs at least one iteration")
    X, instance_ids = _test_arrays(model, X_test)
    Ku = as_array(K_unseen)
    unseen_ids = tuple(getattr(K_unseen, "class_ids", None) or
                       (f"u{j:04d}" for j in range(Ku.shape[1])))
    if model.config.normalize:
        Ku = l2_normalize_columns(Ku)

    preds_s = predict_semantic(model.f_s, X)
    if Ku.shape[0] != preds_s.shape[0]:
        raise DimensionMismatch(
            f"unseen embeddings have dim {Ku.shape[0]} but f_s produces dim {preds_s.shape[0]}"
        )
    k_tilde_u = _refine_prototypes(Ku, preds_s, X, model.config.m)
    preds_tilde = predict_semantic(model.f_tilde, X)
    for _ in range(iterations - 1):
        k_tilde_u = _refine_prototypes(k_tilde_u, preds_tilde, X, model.config.m)

    if mode == GZSR:
        candidates = np.concatenate([model.k_tilde_s.data, k_tilde_u], axis=1)
        candidate_ids = model.k_tilde_s.class_ids + unseen_ids
    else:
        candidates = k_tilde_u
        candidate_ids = unseen_ids
    prediction = _score_and_predict(candidates, candidate_ids, preds_tilde, instance_ids)
    prototype_set = PrototypeSet(k_tilde_u, unseen_ids, source=KNN_AVERAGE)
    return prediction, prototype_set
