"""Layer-wise linear probes: how separable is each endpoint's representation.

Features are flattened endpoint activations from single center-crop forward
passes. Probes are a binary hinge-loss SVM and a 2-way softmax classifier,
both trained by deterministic full-batch (sub)gradient descent with the
step schedule 1/(lambda * t) over a fixed iteration budget, with the L2
penalty on weights only. Regularization strength comes from nested
cross-validation on the training folds; ties prefer the smaller lambda.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import ViewSource, stratified_kfold
from .errors import ConfigError, DataError
from .network import NetworkSpec, forward
from .ops import softmax as _softmax_rows

Array = np.ndarray

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
PROBE_KINDS = ("svm", "softmax")
ITERATION_BUDGET = 2000


def extract_features(
    spec: NetworkSpec,
    ckpt: Checkpoint,
    source: ViewSource,
    endpoint: str,
    pre_activation: bool = False,
    batch_size: int = 32,
) -> Array:
    """Float32 feature matrix [n, d]: flattened endpoint activations.

    One center-crop forward pass per image, streamed in small batches so
    memory stays bounded; row order matches the source order.
    """
    if endpoint not in spec.endpoints:
        raise ConfigError(f"unknown endpoint {endpoint!r}; expected one of {spec.endpoints}")
    rows: list[Array] = []
    for x, _ in source.eval_batches(batch_size):
        state = forward(spec, ckpt, x)
        act = state.endpoint(endpoint, pre_activation=pre_activation)
        rows.append(np.ascontiguousarray(act.reshape(act.shape[0], -1), dtype=np.float32))
    return np.vstack(rows)


@dataclass
class ProbeModel:
    """A fitted probe: linear weights plus the training-fold standardization."""

    kind: str
    lam: float
    weights: Array  # [d] for svm, [d,2] for softmax
    bias: Array  # scalar array for svm, [2] for softmax
    mean: Array | None
    scale: Array | None

    def _transform(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        return x

    def decision_values(self, x: Array) -> Array:
        x = self._transform(x)
        return x @ self.weights + self.bias

    def predict(self, x: Array) -> Array:
        values = self.decision_values(x)
        if self.kind == "svm":
            return (values > 0).astype(np.int64)
        return values.argmax(axis=1)


def _standardizer(x: Array) -> tuple[Array, Array]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)  # constant columns pass through
    return mean, scale


def _fit_svm(x: Array, y01: Array, lam: float, iters: int) -> tuple[Array, Array]:
    n, d = x.shape
    y = np.where(y01 > 0, 1.0, -1.0)
    w = np.zeros(d)
    b = np.zeros(())
    for t in range(1, iters + 1):
        step = 1.0 / (lam * t)
        scores = x @ w + b
        active = (1.0 - y * scores) > 0
        coeff = np.where(active, y, 0.0) / n
        grad_w = lam * w - x.T @ coeff
        grad_b = -coeff.sum()
        w -= step * grad_w
        b -= step * grad_b
    return w, b


def _fit_softmax(x: Array, y01: Array, lam: float, iters: int) -> tuple[Array, Array]:
    n, d = x.shape
    w = np.zeros((d, 2))
    b = np.zeros(2)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), y01] = 1.0
    for t in range(1, iters + 1):
        step = 1.0 / (lam * t)
        probs = _softmax_rows(x @ w + b)
        delta = (probs - onehot) / n
        grad_w = lam * w + x.T @ delta
        grad_b = delta.sum(axis=0)
        w -= step * grad_w
        b -= step * grad_b
    return w, b


def _fit_one(x: Array, y: Array, kind: str, lam: float, standardize: bool, iters: int) -> ProbeModel:
    x64 = np.asarray(x, dtype=np.float64)
    mean = scale = None
    if standardize:
        mean, scale = _standardizer(x64)
        x64 = (x64 - mean) / scale
    if kind == "svm":
        w, b = _fit_svm(x64, y, lam, iters)
    elif kind == "softmax":
        w, b = _fit_softmax(x64, y, lam, iters)
    else:
        raise ConfigError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")
    return ProbeModel(kind=kind, lam=lam, weights=w, bias=b, mean=mean, scale=scale)


def fit_probe(
    features: Array,
    labels: Array,
    kind: str,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    inner_folds: int = 3,
    standardize: bool = True,
    seed: int = 0,
    iters: int = ITERATION_BUDGET,
) -> tuple[ProbeModel, dict[float, float]]:
    """Nested-CV lambda selection, then a refit on all rows.

    Returns the refitted model and the inner-CV accuracy per lambda. Inner
    folds are stratified and deterministic in seed; ties go to the smaller
    lambda. Standardization statistics always come from the fitting rows
    only.
    """
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels):
        raise DataError(f"features {features.shape} do not match {len(labels)} labels")
    if not lambda_grid or any(l <= 0 for l in lambda_grid):
        raise ConfigError(f"lambda grid must be positive, got {lambda_grid}")
    if labels.min() < 0 or labels.max() > 1:
        raise DataError("probe labels must be binary 0/1")

    grid = sorted(set(float(l) for l in lambda_grid))
    if len(grid) == 1:
        chosen = {grid[0]: float("nan")}
        lam = grid[0]
    else:
        inner = stratified_kfold(labels, inner_folds, seed)
        scores: dict[float, float] = {}
        for lam_cand in grid:
            accs = []
            for f in range(inner_folds):
                tr, va = inner != f, inner == f
                model = _fit_one(features[tr], labels[tr], kind, lam_cand, standardize, iters)
                accs.append(float((model.predict(features[va]) == labels[va]).mean()))
            scores[lam_cand] = float(np.mean(accs))
        best = max(scores.values())
        lam = min(l for l, s in scores.items() if s == best)
        chosen = scores
    model = _fit_one(features, labels, kind, lam, standardize, iters)
    return model, chosen


@dataclass(frozen=True)
class ProbeRow:
    endpoint: str
    kind: str
    fold: int
    accuracy: float
    lam: float


@dataclass
class ProbeReport:
    """Per-(endpoint, kind, fold) probe accuracies plus run policy notes."""

    rows: list[ProbeRow]
    endpoints: tuple[str, ...]
    kinds: tuple[str, ...]
    pre_activation: bool
    standardize: bool
    view: str = "center"

    def accuracies(self, endpoint: str, kind: str) -> list[float]:
        return [r.accuracy for r in self.rows if r.endpoint == endpoint and r.kind == kind]

    def mean_accuracy(self, endpoint: str, kind: str) -> float:
        accs = self.accuracies(endpoint, kind)
        if not accs:
            raise DataError(f"no probe rows for {endpoint}/{kind}")
        return float(np.mean(accs))

    def to_csv(self) -> str:
        lines = ["endpoint,kind,fold,accuracy,lambda"]
        for r in self.rows:
            lines.append(f"{r.endpoint},{r.kind},{r.fold},{r.accuracy:.6f},{r.lam:g}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        feature_note = "pre-activation" if self.pre_activation else "post-activation"
        lines = [
            "| Endpoint | " + " | ".join(k.upper() if k == "svm" else k.capitalize() for k in self.kinds) + " |",
            "|---" * (len(self.kinds) + 1) + "|",
        ]
        for ep in self.endpoints:
            cells = []
            for kind in self.kinds:
                accs = self.accuracies(ep, kind)
                if accs:
                    cells.append(f"{np.mean(accs):.3f} ± {_sample_std(accs):.3f}")
                else:
                    cells.append("-")
            lines.append(f"| {ep} | " + " | ".join(cells) + " |")
        lines.append("")
        lines.append(
            f"Features: {feature_note}, single {self.view} view, "
            f"{'standardized' if self.standardize else 'raw'} columns."
        )
        return "\n".join(lines) + "\n"


def _sample_std(values: Iterable[float]) -> float:
    vals = list(values)
    if len(vals) < 2:
        return 0.0
    return float(np.std(vals, ddof=1))


def probe_all_layers(
    spec: NetworkSpec,
    ckpt: Checkpoint,
    source: ViewSource,
    folds: Array,
    endpoints: Sequence[str] | None = None,
    kinds: Sequence[str] = PROBE_KINDS,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    inner_folds: int = 3,
    standardize: bool = True,
    pre_activation: bool = False,
    seed: int = 0,
    iters: int = ITERATION_BUDGET,
) -> ProbeReport:
    """Outer-CV probe accuracy for every endpoint and probe kind.

    For each outer fold, lambda is re-selected by nested CV on that fold's
    training rows only, so no test row ever influences selection or
    standardization.
    """
    folds = np.asarray(folds)
    labels = source.labels
    if len(folds) != len(labels):
        raise DataError(f"{len(folds)} fold ids for {len(labels)} examples")
    for kind in kinds:
        if kind not in PROBE_KINDS:
            raise ConfigError(f"unknown probe kind {kind!r}")
    names = tuple(endpoints) if endpoints is not None else spec.endpoints
    fold_ids = sorted(int(f) for f in np.unique(folds))
    rows: list[ProbeRow] = []
    for endpoint in names:
        features = extract_features(spec, ckpt, source, endpoint, pre_activation=pre_activation)
        for kind in kinds:
            for f in fold_ids:
                tr, te = folds != f, folds == f
                model, _ = fit_probe(
                    features[tr], labels[tr], kind, lambda_grid, inner_folds, standardize, seed, iters
                )
                acc = float((model.predict(features[te]) == labels[te]).mean())
                rows.append(ProbeRow(endpoint, kind, f, acc, model.lam))
    return ProbeReport(
        rows=rows,
        endpoints=names,
        kinds=tuple(kinds),
        pre_activation=pre_activation,
        standardize=standardize,
    )
