"""Classifier two-sample test and moment diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold

from ._validation import ContractError, as_generator, check_positive_int, check_samples


def hidden_width(d):
    return max(10 * int(d), 20)


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Two-hidden-layer ReLU perceptron trained with Adam on softmax cross-entropy.

    ``hidden_layer_sizes=None`` picks ``max(10 d, 20)`` units per layer.  A
    ``validation_fraction`` slice of the training data drives early stopping:
    training halts after ``patience`` epochs without improvement and the
    best weights are restored.
    """

    def __init__(
        self,
        hidden_layer_sizes=None,
        learning_rate=1e-3,
        batch_size=128,
        max_epochs=300,
        validation_fraction=0.1,
        patience=20,
        weight_decay=0.0,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.patience = patience
        self.weight_decay = weight_decay
        self.random_state = random_state

    # -- network -----------------------------------------------------------
    def _init_params(self, sizes, rng):
        params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            params.extend([w, np.zeros(fan_out)])
        return params

    @staticmethod
    def _forward(params, X):
        acts = [X]
        h = X
        n_layers = len(params) // 2
        for i in range(n_layers):
            z = h @ params[2 * i] + params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        return acts

    @staticmethod
    def _softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def _loss(self, params, X, Y):
        p = self._softmax(self._forward(params, X)[-1])
        return float(-np.mean(np.sum(Y * np.log(np.clip(p, 1e-300, None)), axis=1)))

    def _grads(self, params, X, Y):
        acts = self._forward(params, X)
        delta = (self._softmax(acts[-1]) - Y) / X.shape[0]
        grads = [None] * len(params)
        for i in reversed(range(len(params) // 2)):
            grads[2 * i] = acts[i].T @ delta + self.weight_decay * params[2 * i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ params[2 * i].T) * (acts[i] > 0)
        return grads

    # -- estimator API -----------------------------------------------------
    def fit(self, X, y):
        X = check_samples(X, "X")
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ContractError("y must be a 1-D label vector matching X")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ContractError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        rng = as_generator(self.random_state)
        width = self.hidden_layer_sizes or (hidden_width(X.shape[1]),) * 2
        sizes = [X.shape[1], *width, self.classes_.size]
        params = self._init_params(sizes, rng)
        Y = np.eye(self.classes_.size)[codes]

        perm = rng.permutation(X.shape[0])
        n_val = int(round(self.validation_fraction * X.shape[0]))
        val, tr = perm[:n_val], perm[n_val:]
        Xtr, Ytr = X[tr], Y[tr]

        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        best_loss, best_params, stale = np.inf, [p.copy() for p in params], 0
        self.loss_curve_ = []
        bs = check_positive_int(self.batch_size, "batch_size")
        for epoch in range(check_positive_int(self.max_epochs, "max_epochs")):
            order = rng.permutation(Xtr.shape[0])
            for start in range(0, order.size, bs):
                idx = order[start : start + bs]
                grads = self._grads(params, Xtr[idx], Ytr[idx])
                step += 1
                lr_t = self.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= beta1
                    mi += (1 - beta1) * g
                    vi *= beta2
                    vi += (1 - beta2) * g * g
                    p -= lr_t * mi / (np.sqrt(vi) + eps)
            monitor = self._loss(params, X[val], Y[val]) if n_val else self._loss(params, Xtr, Ytr)
            self.loss_curve_.append(monitor)
            if monitor < best_loss - 1e-6:
                best_loss, best_params, stale = monitor, [p.copy() for p in params], 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.params_ = best_params
        self.n_epochs_ = epoch + 1
        self.best_validation_loss_ = best_loss
        return self

    def predict_proba(self, X):
        if not hasattr(self, "params_"):
            raise ContractError("classifier is not fitted")
        X = check_samples(X, "X")
        return self._softmax(self._forward(self.params_, X)[-1])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


@dataclass(frozen=True)
class C2STConfig:
    folds: int = 5
    max_epochs: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 128
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.folds, (int, np.integer)) and self.folds >= 2):
            raise ContractError(f"folds must be an integer >= 2, got {self.folds!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class C2STResult:
    accuracy: float
    fold_accuracies: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self):
        f = np.asarray(self.fold_accuracies)
        return float(f.std(ddof=1) / np.sqrt(f.size)) if f.size > 1 else 0.0


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = sd > 0
    # constant columns carry no information; drop them rather than divide by 0
    return (X[:, keep] - mu[keep]) / sd[keep], int((~keep).sum())


def c2st(samples_p, samples_q, config=None):
    """Held-out accuracy of a classifier separating two sample sets.

    0.5 means the sets are indistinguishable; 1.0 means perfectly separable.
    """
    config = config or C2STConfig()
    P = check_samples(samples_p, "samples_p")
    Q = check_samples(samples_q, "samples_q")
    if P.shape != Q.shape:
        raise ContractError(f"sample sets must have equal shapes, got {P.shape} and {Q.shape}")
    X, dropped = _standardize(np.concatenate([P, Q]))
    y = np.r_[np.zeros(len(P), int), np.ones(len(Q), int)]
    if X.shape[1] == 0:
        return C2STResult(0.5, [0.5] * config.folds, {"dropped_dims": dropped})
    folds = StratifiedKFold(n_splits=config.folds, shuffle=True, random_state=config.seed)
    accs, epochs = [], []
    for k, (tr, te) in enumerate(folds.split(X, y)):
        clf = MLPClassifier(
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            patience=config.patience,
            random_state=np.random.SeedSequence(config.seed, spawn_key=(k,)).generate_state(1)[0],
        ).fit(X[tr], y[tr])
        accs.append(float(np.mean(clf.predict(X[te]) == y[te])))
        epochs.append(clf.n_epochs_)
    return C2STResult(float(np.mean(accs)), accs, {"dropped_dims": dropped, "epochs": epochs})


def moment_diagnostics(samples, reference):
    """Per-dimension mean difference and Frobenius norm of the covariance difference."""
    S = check_samples(samples, "samples")
    R = check_samples(reference, "reference")
    if S.shape[1] != R.shape[1]:
        raise ContractError("samples and reference must have the same dimension")
    mean_err = S.mean(axis=0) - R.mean(axis=0)
    cov = lambda A: np.atleast_2d(np.cov(A, rowvar=False))  # noqa: E731
    return mean_err, float(np.linalg.norm(cov(S) - cov(R)))
