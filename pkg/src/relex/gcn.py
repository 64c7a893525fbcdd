"""Minimal dense two-layer GCN for node classification.

Forward pass: softmax(A_hat . relu(A_hat . X . W0) . W1) where A_hat is
the symmetrically normalized adjacency with self-loops.  Training is plain
full-batch gradient descent with manually derived gradients, which keeps
runs deterministic and makes the finite-difference gradient check simple.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from relex.graphs import NodeSplit, RelationalGraph, adjacency


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    hidden_dim: int = 32
    max_epochs: int = 10000
    learning_rate: float = 0.02
    seed: int = 0
    patience: int = 200
    restarts: int = 3

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(eq=False)
class GcnModel:
    """Trained weights plus the training graph's normalized adjacency.

    Bias vectors are required: with constant node features (the synthetic
    benchmarks) a bias-free two-layer GCN has rank-one logits and predicts
    a single class everywhere.
    """

    w0: np.ndarray  # (d, h)
    w1: np.ndarray  # (h, C)
    b0: np.ndarray  # (h,)
    b1: np.ndarray  # (C,)
    hidden_dim: int
    class_count: int
    seed: int
    a_hat: np.ndarray | None = None  # cached normalized adjacency of the training graph

    def __post_init__(self):
        for arr in (self.w0, self.w1, self.b0, self.b1):
            if not np.isfinite(arr).all():
                raise ValueError("model weights must be finite")
        if self.w0.shape[1] != self.hidden_dim or self.w1.shape != (self.hidden_dim, self.class_count):
            raise ValueError("weight shapes must chain d -> h -> C")
        if self.b0.shape != (self.hidden_dim,) or self.b1.shape != (self.class_count,):
            raise ValueError("bias shapes must match layer widths")

    @property
    def input_dim(self) -> int:
        return self.w0.shape[0]


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} for a 0/1 or weighted symmetric matrix."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("adjacency must be square")
    a_tilde = a + np.eye(n)
    d = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def _forward(a_hat: np.ndarray, x: np.ndarray, w0: np.ndarray, w1: np.ndarray,
             b0: np.ndarray, b1: np.ndarray):
    z1 = a_hat @ x @ w0 + b0
    h1 = np.maximum(z1, 0.0)
    z2 = a_hat @ h1 @ w1 + b1
    z2 = z2 - z2.max(axis=1, keepdims=True)
    exp = np.exp(z2)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return z1, h1, probs


def gcn_forward(m: GcnModel, features: np.ndarray,
                a_hat: np.ndarray | None = None) -> np.ndarray:
    """Class-probability matrix (n, C); rows sum to 1."""
    a_hat = m.a_hat if a_hat is None else a_hat
    if a_hat is None:
        raise ValueError("model has no cached adjacency; pass a_hat explicitly")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != m.input_dim:
        raise ValueError(f"feature dim {features.shape[1]} != model input dim {m.input_dim}")
    return _forward(a_hat, features, m.w0, m.w1, m.b0, m.b1)[2]


def predict(m: GcnModel, g: RelationalGraph) -> np.ndarray:
    """Argmax labels on g; ties break toward the lower class index."""
    a_hat = normalize_adjacency(adjacency(g))
    probs = gcn_forward(m, g.features, a_hat=a_hat)
    return probs.argmax(axis=1)


def loss_and_grads(a_hat: np.ndarray, x: np.ndarray, y: np.ndarray,
                   train_idx: np.ndarray, w0: np.ndarray, w1: np.ndarray,
                   b0: np.ndarray, b1: np.ndarray):
    """Mean cross-entropy over train nodes and its gradients."""
    z1, h1, probs = _forward(a_hat, x, w0, w1, b0, b1)
    eps = 1e-12
    loss = -np.mean(np.log(probs[train_idx, y[train_idx]] + eps))

    g2 = np.zeros_like(probs)
    g2[train_idx] = probs[train_idx]
    g2[train_idx, y[train_idx]] -= 1.0
    g2 /= len(train_idx)

    grad_b1 = g2.sum(axis=0)
    ah_g2 = a_hat @ g2                    # A_hat symmetric, so A^T = A
    grad_w1 = h1.T @ ah_g2
    g1 = (ah_g2 @ w1.T) * (z1 > 0)
    grad_b0 = g1.sum(axis=0)
    grad_w0 = (a_hat @ x).T @ g1
    return loss, grad_w0, grad_w1, grad_b0, grad_b1


def _accuracy(probs: np.ndarray, y: np.ndarray, idx) -> float:
    if len(idx) == 0:
        return 0.0
    idx = np.asarray(idx)
    return float((probs[idx].argmax(axis=1) == y[idx]).mean())


def init_weights(d: int, hidden: int, classes: int, seed: int):
    rng = np.random.default_rng(seed)
    w0 = rng.uniform(-0.1, 0.1, size=(d, hidden))
    w1 = rng.uniform(-0.1, 0.1, size=(hidden, classes))
    b0 = rng.uniform(-0.1, 0.1, size=hidden)
    b1 = rng.uniform(-0.1, 0.1, size=classes)
    return w0, w1, b0, b1


def _adam_run(a_hat, x, y, class_count, train_idx, monitor_idx,
              cfg: TrainConfig, seed: int):
    """One seeded full-batch Adam run; returns (best params, best accuracy).

    Plain gradient descent cannot escape the class-prior plateau on the
    structure-only benchmarks (constant features leave only a normalized
    degree scalar as input, and the layer-1 gradients are orders of
    magnitude below layer-2's); Adam's per-parameter scaling fixes that
    while staying fully deterministic.
    """
    params = list(init_weights(x.shape[1], cfg.hidden_dim, class_count, seed))
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    best = [p.copy() for p in params]
    best_acc = (-1.0, -1.0)  # (monitored accuracy, train accuracy tie-break)
    best_loss = math.inf
    stale = 0
    for t in range(1, cfg.max_epochs + 1):
        loss, *grads = loss_and_grads(a_hat, x, y, train_idx, *params)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at epoch {t}")
        for j, grad in enumerate(grads):
            mom[j] = beta1 * mom[j] + (1 - beta1) * grad
            vel[j] = beta2 * vel[j] + (1 - beta2) * grad * grad
            m_hat = mom[j] / (1 - beta1 ** t)
            v_hat = vel[j] / (1 - beta2 ** t)
            params[j] = params[j] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        probs = _forward(a_hat, x, *params)[2]
        acc = (_accuracy(probs, y, monitor_idx), _accuracy(probs, y, train_idx))
        improved = False
        if acc > best_acc:
            best_acc = acc
            best = [p.copy() for p in params]
            improved = True
        # patience also resets while the train loss improves; tiny
        # validation sets saturate long before the optimizer is done
        if loss < best_loss - 1e-6:
            best_loss = loss
            improved = True
        if improved:
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, best_acc


def train_gcn(g: RelationalGraph, split: NodeSplit, cfg: TrainConfig) -> GcnModel:
    """Full-batch training; returns the model with the best validation
    accuracy seen across cfg.restarts seeded restarts.

    Deterministic for a fixed seed (restart r uses seed + r).  Early
    stopping monitors validation accuracy (training accuracy when the
    validation set is empty) with the configured patience.
    """
    if len(split.train) == 0:
        raise ValueError("training split is empty")
    a_hat = normalize_adjacency(adjacency(g))
    x = g.features
    y = g.labels
    train_idx = np.asarray(split.train)
    monitor_idx = np.asarray(split.validation if split.validation else split.train)

    best_params = None
    best_acc = (-1.0, -1.0)
    for r in range(cfg.restarts):
        params, acc = _adam_run(a_hat, x, y, g.class_count, train_idx,
                                monitor_idx, cfg, cfg.seed + r)
        if acc > best_acc:
            best_acc = acc
            best_params = params
    w0, w1, b0, b1 = best_params
    return GcnModel(w0=w0, w1=w1, b0=b0, b1=b1,
                    hidden_dim=cfg.hidden_dim, class_count=g.class_count,
                    seed=cfg.seed, a_hat=a_hat)


# ---------------------------------------------------------------------------
# Serialization: JSON with dims, seed and row-major weight arrays.  Python's
# float repr round-trips exactly, so plain json keeps full precision.
# ---------------------------------------------------------------------------

def save_model(m: GcnModel, path: str | Path) -> None:
    blob = {
        "input_dim": m.input_dim,
        "hidden_dim": m.hidden_dim,
        "class_count": m.class_count,
        "seed": m.seed,
        "w0": m.w0.tolist(),
        "w1": m.w1.tolist(),
        "b0": m.b0.tolist(),
        "b1": m.b1.tolist(),
    }
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_model(path: str | Path, graph: RelationalGraph | None = None) -> GcnModel:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    a_hat = None
    if graph is not None:
        a_hat = normalize_adjacency(adjacency(graph))
    return GcnModel(w0=np.asarray(blob["w0"], dtype=np.float64),
                    w1=np.asarray(blob["w1"], dtype=np.float64),
                    b0=np.asarray(blob["b0"], dtype=np.float64),
                    b1=np.asarray(blob["b1"], dtype=np.float64),
                    hidden_dim=int(blob["hidden_dim"]),
                    class_count=int(blob["class_count"]),
                    seed=int(blob["seed"]),
                    a_hat=a_hat)
