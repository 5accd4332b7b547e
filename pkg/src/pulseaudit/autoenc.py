"""From-scratch MLP autoencoder for learned low-dimensional window features.

Five neuron layers (input, hidden, bottleneck, hidden, output; four weight
matrices).  The two interior hidden layers use ReLU; the bottleneck and
the output are linear so codes and reconstructions can take either sign.
Training is plain minibatch Adam on the mean squared reconstruction error,
with manually derived gradients; the finite-difference agreement of those
gradients is part of the test suite.

Everything is deterministic given the config seed: Xavier-uniform init and
epoch shuffling both come from one seeded generator, so two runs produce
bit-identical weight trajectories.
"""

import base64
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .util import PulseAuditError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class DivergenceError(PulseAuditError):
    """Training loss became non-finite."""


@dataclass
class MlpSpec:
    input_dim: int
    hidden: int = 128
    bottleneck: int = 20

    def __post_init__(self):
        if self.bottleneck >= self.input_dim:
            raise ValueError("bottleneck must be narrower than the input")
        if min(self.input_dim, self.hidden, self.bottleneck) < 1:
            raise ValueError("all layer widths must be positive")

    @property
    def layer_dims(self):
        return (self.input_dim, self.hidden, self.bottleneck, self.hidden, self.input_dim)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stop_loss: float = 0.1
    max_epochs: int = 500
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.stop_loss <= 0:
            raise ValueError("lr and stop_loss must be positive")


@dataclass
class TrainedModel:
    spec: MlpSpec
    weights: list           # four (in, out) matrices
    biases: list            # four (out,) vectors
    history: list = field(default_factory=list)  # (epoch, mean loss)
    converged: bool = False
    seed: int = 0

    @property
    def final_loss(self):
        return self.history[-1][1] if self.history else float("nan")


# ReLU sits after weight layers 0 and 2 (the interior hidden layers).
_RELU_LAYERS = (0, 2)


def _forward(weights, biases, X):
    acts = [X]
    a = X
    for i in range(4):
        z = a @ weights[i] + biases[i]
        a = np.maximum(z, 0.0) if i in _RELU_LAYERS else z
        acts.append(a)
    return acts


def loss_and_gradients(weights, biases, X):
    """MSE reconstruction loss and its gradients for one batch.

    Loss is the mean over batch entries *and* features of the squared
    reconstruction error.  Returns ``(loss, grad_weights, grad_biases)``.
    """
    B, D = X.shape
    acts = _forward(weights, biases, X)
    diff = acts[-1] - X
    loss = float(np.mean(diff * diff))
    grad_w = [None] * 4
    grad_b = [None] * 4
    delta = 2.0 * diff / (B * D)
    for i in range(3, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            if (i - 1) in _RELU_LAYERS:
                delta = delta * (acts[i] > 0)
    return loss, grad_w, grad_b


def _init_params(spec, rng):
    dims = spec.layer_dims
    weights = []
    biases = []
    for i in range(4):
        limit = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        weights.append(rng.uniform(-limit, limit, size=(dims[i], dims[i + 1])))
        biases.append(np.zeros(dims[i + 1]))
    return weights, biases


def train(X, spec, cfg):
    """Train until the epoch-mean loss drops below ``cfg.stop_loss``.

    Parameters
    ----------
    X : (N, input_dim) array
        Training vectors; for signal windows these should be z-normalized
        per window.
    spec : MlpSpec
    cfg : TrainConfig

    Returns
    -------
    TrainedModel
        ``converged`` is False when ``max_epochs`` ran out first.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite, naming the epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"training data must be (N, {spec.input_dim})")
    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_params(spec, rng)
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    history = []
    step = 0
    N = len(X)
    converged = False
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(N)
        total = 0.0
        for s in range(0, N, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grad_w, grad_b = loss_and_gradients(weights, biases, X[idx])
            total += loss * len(idx)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for i in range(4):
                for params, grads, m, v in ((weights, grad_w, m_w, v_w),
                                            (biases, grad_b, m_b, v_b)):
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i]
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] ** 2
                    params[i] -= cfg.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + cfg.eps)
        epoch_loss = total / N
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"training diverged at epoch {epoch}")
        history.append((epoch, epoch_loss))
        if epoch_loss < cfg.stop_loss:
            converged = True
            break
    if not converged:
        logger.warning("training stopped unconverged at loss %.4f after %d epochs",
                       history[-1][1], cfg.max_epochs)
    return TrainedModel(spec, weights, biases, history, converged, cfg.seed)


def encode(model, x):
    """Bottleneck code(s) for one vector or a batch: the encoder half only."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.spec.input_dim:
        raise ValueError(f"input length {X.shape[1]} != model input width "
                         f"{model.spec.input_dim}")
    h = np.maximum(X @ model.weights[0] + model.biases[0], 0.0)
    code = h @ model.weights[1] + model.biases[1]
    return code[0] if single else code


def reconstruct(model, x):
    """Full encoder + decoder pass."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    out = _forward(model.weights, model.biases, X)[-1]
    return out[0] if single else out


@dataclass
class BottleneckChoice:
    size: int
    converged: bool
    losses: dict  # candidate size -> final loss


def choose_bottleneck(X, candidate_sizes, cfg, hidden=128):
    """Smallest bottleneck reaching the reconstruction-loss target.

    Trains one model per candidate (ascending) and returns the first whose
    final loss is below ``cfg.stop_loss``; if none succeeds the largest
    candidate is returned with ``converged=False``.
    """
    candidates = sorted(candidate_sizes)
    if not candidates:
        raise ValueError("candidate_sizes must be nonempty")
    X = np.asarray(X, dtype=np.float64)
    losses = {}
    for size in candidates:
        model = train(X, MlpSpec(X.shape[1], hidden, size), cfg)
        losses[size] = model.final_loss
        if model.converged:
            return BottleneckChoice(size, True, losses)
    return BottleneckChoice(candidates[-1], False, losses)


def _encode_array(arr):
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode(),
    }


def _decode_array(obj):
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype=np.float64)
    return arr.reshape(obj["shape"]).copy()


def save_model(model, path):
    """Serialize a model as versioned JSON (weights as base64 float64)."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": {"input_dim": model.spec.input_dim, "hidden": model.spec.hidden,
                 "bottleneck": model.spec.bottleneck},
        "seed": model.seed,
        "converged": model.converged,
        "history": [[int(e), float(l)] for e, l in model.history],
        "weights": [_encode_array(w) for w in model.weights],
        "biases": [_encode_array(b) for b in model.biases],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_model(path):
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise PulseAuditError(f"unsupported model format version {version!r}")
    spec = MlpSpec(**payload["spec"])
    return TrainedModel(
        spec,
        [_decode_array(w) for w in payload["weights"]],
        [_decode_array(b) for b in payload["biases"]],
        [(int(e), float(l)) for e, l in payload["history"]],
        payload["converged"],
        payload["seed"],
    )
