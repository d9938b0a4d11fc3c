"""Metrics for zero-shot predictions: per-class (macro) accuracy, top-k
accuracy, and confusion matrices.

The headline number is the unweighted mean of per-class accuracies over
the classes present in the ground truth — in the generalised setting the
candidate list additionally contains seen classes, but test instances
belong to unseen classes only, so the mean is still taken over those.
Instance-weighted (micro) top-k accuracy is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import as_array
from .errors import MissingInstance, UnknownClass, ValidationError
from .model import CZSR, GZSR, Prediction


@dataclass(frozen=True)
class EvalReport:
    """Summary of one evaluation run.

    ``per_class_accuracy`` maps each ground-truth class to its accuracy;
    ``confusion`` is candidates x candidates with rows = true classes and
    columns = predictions (rows of classes absent from the truth are
    zero).  ``top_k_accuracy`` is instance-weighted.
    """

    per_class_accuracy: Mapping
    mean_per_class_accuracy: float
    top_k_accuracy: Mapping[int, float]
    confusion: np.ndarray
    candidate_ids: tuple
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "per_class_accuracy", dict(self.per_class_accuracy))
        object.__setattr__(self, "top_k_accuracy",
                           {int(k): float(v) for k, v in self.top_k_accuracy.items()})
        confusion = np.array(self.confusion, dtype=np.int64, copy=True)
        confusion.setflags(write=False)
        object.__setattr__(self, "confusion", confusion)
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))


def evaluate(prediction: Prediction, ground_truth: Sequence,
             mode: str | None = None, ks: Sequence[int] = (1,)) -> EvalReport:
    """Score a prediction against per-instance ground-truth classes.

    Parameters
    ----------
    prediction : Prediction
        Must cover exactly the ground-truth instances (same order).
    ground_truth : sequence
        True class of each instance; every class must appear among the
        prediction's candidates.
    mode : str, optional
        ``"czsr"`` or ``"gzsr"``; recorded in the report.  Defaults to
        ``czsr``.
    ks : sequence of int
        Cutoffs for top-k accuracy.  An instance counts as top-k correct
        when its true class is among the k highest-scoring candidates,
        with score ties resolved toward the lower candidate index.

    Raises
    ------
    MissingInstance
        If the instance counts disagree.
    UnknownClass
        If a ground-truth class is not a candidate.
    """
    mode = CZSR if mode is None else mode
    if mode not in (CZSR, GZSR):
        raise ValidationError(f"mode must be {CZSR!r} or {GZSR!r}, got {mode!r}")
    truth = tuple(ground_truth)
    if len(truth) != len(prediction.instance_ids):
        raise MissingInstance(
            f"prediction covers {len(prediction.instance_ids)} instances, "
            f"ground truth has {len(truth)}"
        )
    candidates = prediction.candidate_ids
    cand_index = {cls: j for j, cls in enumerate(candidates)}
    bad = sorted({cls for cls in truth if cls not in cand_index}, key=repr)
    if bad:
        raise UnknownClass(f"ground-truth classes missing from candidates: {bad}")

    scores = as_array(prediction.score_matrix)
    n = len(truth)
    c = len(candidates)

    confusion = np.zeros((c, c), dtype=np.int64)
    for i in range(n):
        confusion[cand_index[truth[i]], cand_index[prediction.predicted_class[i]]] += 1

    present = sorted({cand_index[cls] for cls in truth})
    per_class = {}
    for j in present:
        total = confusion[j].sum()
        per_class[candidates[j]] = float(confusion[j, j] / total)
    mean_acc = float(np.mean([per_class[candidates[j]] for j in present]))

    # Rank of the true class among scores, ties toward lower index: the
    # true class is beaten by candidates with a strictly higher score or
    # an equal score at a lower index.
    top_k = {}
    ks = sorted({int(k) for k in ks})
    if any(k < 1 for k in ks):
        raise ValidationError("top-k cutoffs must be >= 1")
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        t = cand_index[truth[i]]
        col = scores[:, i]
        better = np.sum(col > col[t]) + np.sum(col[:t] == col[t])
        ranks[i] = better  # 0-based rank
    for k in ks:
        top_k[k] = float(np.mean(ranks < k))

    return EvalReport(
        per_class_accuracy=per_class,
        mean_per_class_accuracy=mean_acc,
        top_k_accuracy=top_k,
        confusion=confusion,
        candidate_ids=candidates,
        mode=mode,
    )
