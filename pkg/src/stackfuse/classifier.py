"""Binary meta-classifier over feature vectors.

The stacker is an L2-regularized logistic regression trained by
full-batch gradient descent (optionally mini-batched), written out
explicitly so the gradient can be checked against finite differences.
It follows the scikit-learn estimator protocol, so it composes with
pipelines and model selection from the wider ecosystem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DegenerateLabels, DimensionMismatch, TaskMismatch
from .features import DocumentStore, FeatureLayout, build_feature_vector
from .gold import DetectionGold, GoldStandard, LinkGold, SlotGold
from .grouping import iou
from .records import TaskKind, ValueGroup, record_sort_key

__all__ = [
    "TrainConfig",
    "Instance",
    "LogisticStacker",
    "label_instances",
    "make_instances",
    "train",
    "predict_instances",
]

_LOG_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the meta-classifier."""

    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    batch_size: int | None = None
    seed: int = 0
    tol: float = 1e-10
    threshold: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.l2 < 0:
            raise ValueError("l2 strength must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("decision threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Instance:
    """One key-value candidate: its group, feature row, optional gold
    label, and the meta-confidence filled in at predict time."""

    group: ValueGroup
    features: np.ndarray
    label: bool | None = None
    meta_confidence: float | None = None
    accepted: bool | None = None

    @property
    def key(self):
        return self.group.key

    @property
    def value(self):
        return self.group.value


class LogisticStacker(BaseEstimator, ClassifierMixin):
    """L2-regularized logistic regression fit by gradient descent.

    Features are standardized with per-dimension mean and scale taken
    from the training split and stored on the model.  ``predict``
    accepts an output only when the probability strictly exceeds
    ``threshold``.

    Attributes after ``fit``: ``coef_``, ``intercept_``,
    ``feature_means_``, ``feature_scales_``, ``loss_curve_``,
    ``n_iter_``, ``converged_``.
    """

    def __init__(self, learning_rate=0.1, epochs=500, l2=1e-4,
                 threshold=0.5, batch_size=None, tol=1e-10, seed=0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.threshold = threshold
        self.batch_size = batch_size
        self.tol = tol
        self.seed = seed

    @staticmethod
    def loss_and_gradient(features, labels, weights, bias, l2=0.0):
        """Mean cross-entropy plus (l2/2)*||w||^2 and its analytic
        gradient, at the given parameters.  ``features`` are taken as
        already standardized."""
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        if features.shape[0] == 0:
            raise ValueError("batch must be non-empty")
        if features.shape[1] != len(weights):
            raise DimensionMismatch(
                f"{features.shape[1]} features vs {len(weights)} weights")
        probs = expit(features @ weights + bias)
        clipped = np.clip(probs, _LOG_EPS, 1.0 - _LOG_EPS)
        loss = -np.mean(labels * np.log(clipped)
                        + (1.0 - labels) * np.log(1.0 - clipped))
        loss += 0.5 * l2 * float(weights @ weights)
        err = probs - labels
        grad_w = features.T @ err / len(labels) + l2 * weights
        grad_b = float(np.mean(err))
        return float(loss), grad_w, grad_b

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = y.astype(float)
        if not set(np.unique(y)) <= {0.0, 1.0}:
            raise ValueError("labels must be binary")
        if len(np.unique(y)) < 2:
            raise DegenerateLabels(
                "training set contains a single class; the pipeline upstream "
                "is probably mislabeling")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.feature_means_ = X.mean(axis=0)
        scales = X.std(axis=0)
        scales[scales == 0.0] = 1.0
        self.feature_scales_ = scales
        Z = (X - self.feature_means_) / self.feature_scales_

        rng = np.random.default_rng(self.seed)
        w = np.zeros(self.n_features_in_)
        b = 0.0
        losses = []
        converged = False
        epochs_run = 0
        for _ in range(self.epochs):
            loss, grad_w, grad_b = self.loss_and_gradient(Z, y, w, b, self.l2)
            losses.append(loss)
            if np.sqrt(grad_w @ grad_w + grad_b * grad_b) < self.tol:
                converged = True
                break
            epochs_run += 1
            if self.batch_size is None or self.batch_size >= len(y):
                w = w - self.learning_rate * grad_w
                b = b - self.learning_rate * grad_b
            else:
                order = rng.permutation(len(y))
                for start in range(0, len(y), self.batch_size):
                    part = order[start:start + self.batch_size]
                    _, gw, gb = self.loss_and_gradient(
                        Z[part], y[part], w, b, self.l2)
                    w = w - self.learning_rate * gw
                    b = b - self.learning_rate * gb

        self.coef_ = w
        self.intercept_ = b
        self.loss_curve_ = np.array(losses)
        self.n_iter_ = epochs_run
        self.converged_ = converged
        return self

    def _standardize(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"model expects {self.n_features_in_} features, "
                f"got {X.shape[1]}")
        return (X - self.feature_means_) / self.feature_scales_

    def decision_function(self, X):
        return self._standardize(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.predict_proba(X)[:, 1] > self.threshold

    def loss_gradient(self, X, y):
        """Loss and gradient at the fitted parameters, standardizing X
        with the stored statistics."""
        return self.loss_and_gradient(self._standardize(X), y, self.coef_,
                                      self.intercept_, self.l2)


def _label_slotfill(group: ValueGroup, gold: SlotGold) -> bool:
    return gold.contains(group.key, group.value.text)


def _label_link(group: ValueGroup, gold: LinkGold) -> bool:
    gold_id = gold.cluster_of(group.value.span)
    if gold_id is None:
        return False
    if group.key.is_nil:
        return gold_id.startswith("NIL")
    return gold_id == group.key.cluster_id


def _label_detections(groups: list[ValueGroup], gold: DetectionGold,
                      roster) -> dict[int, bool]:
    """Greedy matching per image: highest-confidence groups claim the
    gold box of max IOU (> 0.5, same category); each gold box matches
    once."""
    labels = {i: False for i in range(len(groups))}
    by_image: dict[str, list[int]] = {}
    for i, group in enumerate(groups):
        by_image.setdefault(group.key.image_id, []).append(i)
    for image_id, indices in by_image.items():
        indices.sort(key=lambda i: record_sort_key(groups[i].canonical,
                                                   roster))
        unmatched = list(gold.for_image(image_id))
        for i in indices:
            detection = groups[i].value
            best_j, best_iou = -1, 0.5
            for j, (category, box) in enumerate(unmatched):
                if category != detection.category:
                    continue
                overlap = iou(box, detection.box)
                if overlap > best_iou:
                    best_j, best_iou = j, overlap
            if best_j >= 0:
                labels[i] = True
                del unmatched[best_j]
    return labels


def make_instances(groups, layout: FeatureLayout,
                   store: DocumentStore | None = None) -> list[Instance]:
    """Feature rows for prediction (no labels)."""
    return [Instance(group=g, features=build_feature_vector(g, layout, store))
            for g in groups]


def label_instances(groups, gold: GoldStandard, layout: FeatureLayout,
                    store: DocumentStore | None = None) -> list[Instance]:
    """Feature rows plus gold labels for training."""
    groups = list(groups)
    task = layout.task
    if task is TaskKind.SLOT_FILLING:
        if not isinstance(gold, SlotGold):
            raise TaskMismatch("slot filling needs a SlotGold standard")
        labels = [_label_slotfill(g, gold) for g in groups]
    elif task is TaskKind.ENTITY_LINKING:
        if not isinstance(gold, LinkGold):
            raise TaskMismatch("entity linking needs a LinkGold standard")
        labels = [_label_link(g, gold) for g in groups]
    else:
        if not isinstance(gold, DetectionGold):
            raise TaskMismatch("detection needs a DetectionGold standard")
        by_index = _label_detections(groups, gold, layout.roster)
        labels = [by_index[i] for i in range(len(groups))]
    return [Instance(group=g, features=build_feature_vector(g, layout, store),
                     label=label)
            for g, label in zip(groups, labels)]


def train(instances, config: TrainConfig = TrainConfig()) -> LogisticStacker:
    """Fit the stacker on labeled instances."""
    if not instances:
        raise DegenerateLabels("no training instances")
    if any(inst.label is None for inst in instances):
        raise ValueError("all training instances must be labeled")
    X = np.vstack([inst.features for inst in instances])
    y = np.array([float(inst.label) for inst in instances])
    stacker = LogisticStacker(
        learning_rate=config.learning_rate, epochs=config.epochs,
        l2=config.l2, threshold=config.threshold,
        batch_size=config.batch_size, tol=config.tol, seed=config.seed)
    return stacker.fit(X, y)


def predict_instances(stacker: LogisticStacker, instances) -> list[Instance]:
    """Fill meta-confidences and the accept decision on each instance."""
    instances = list(instances)
    if not instances:
        return []
    X = np.vstack([inst.features for inst in instances])
    probs = stacker.predict_proba(X)[:, 1]
    accepted = probs > stacker.threshold
    return [replace(inst, meta_confidence=float(p), accepted=bool(a))
            for inst, p, a in zip(instances, probs, accepted)]
