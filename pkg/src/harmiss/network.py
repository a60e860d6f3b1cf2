"""LSTM classifier in plain numpy: forward pass, loss and exact gradients.

Architecture: one LSTM layer, dropout on the last hidden state, a ReLU
dense layer and a softmax output layer. Weight matrices are stored as
``(out, in)`` so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json

import numpy as np

GATES = ("f", "i", "o", "c")
CHECKPOINT_VERSION = 1
LOG_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    pass


def sigmoid(z):
    # tanh form is overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def param_shapes(input_size, num_classes, hidden_size, dense_units) -> dict:
    """Parameter shapes in storage order.

    The stacked ``W``/``U``/``b`` blocks hold the gates in the order
    f, i, o, c; the per-gate names are row slices of them.
    """
    h, d = hidden_size, input_size
    return {
        "W": (4 * h, d),
        "U": (4 * h, h),
        "b": (4 * h,),
        "W1": (dense_units, h),
        "b1": (dense_units,),
        "W2": (num_classes, dense_units),
        "b2": (num_classes,),
    }


def unflatten(theta, shapes) -> dict:
    """Named views into the flat vector ``theta`` (stacked and per-gate)."""
    views = {}
    pos = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        views[name] = theta[pos:pos + size].reshape(shape)
        pos += size
    if pos != theta.size:
        raise ValueError(f"flat vector has {theta.size} entries, shapes need {pos}")
    h = shapes["U"][1]
    for k, g in enumerate(GATES):
        rows = slice(k * h, (k + 1) * h)
        views[f"W_{g}"] = views["W"][rows]
        views[f"U_{g}"] = views["U"][rows]
        views[f"b_{g}"] = views["b"][rows]
    return views


class ClassifierModel:
    """LSTM classifier parameters plus hyperparameters.

    All weights live in one contiguous vector ``theta``; ``params`` maps
    names (``W_f``, ``U_c``, ``W1`` ... and the stacked ``W``, ``U``,
    ``b``) to views of it, so writing through a view updates the model.
    """

    def __init__(self, theta, input_size, num_classes, hidden_size=128, dense_units=64,
                 dropout_p=0.2, timesteps=1):
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {dropout_p}")
        self.input_size = int(input_size)
        self.num_classes = int(num_classes)
        self.hidden_size = int(hidden_size)
        self.dense_units = int(dense_units)
        self.dropout_p = float(dropout_p)
        self.timesteps = int(timesteps)
        self.shapes = param_shapes(input_size, num_classes, hidden_size, dense_units)
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)
        self.params = unflatten(self.theta, self.shapes)

    @classmethod
    def from_params(cls, params: dict, **hyper) -> "ClassifierModel":
        """Build from per-gate or stacked named arrays."""
        p = dict(params)
        for stacked in ("W", "U", "b"):
            if stacked not in p:
                p[stacked] = np.concatenate([p[f"{stacked}_{g}"] for g in GATES], axis=0)
        shapes = param_shapes(hyper["input_size"], hyper["num_classes"],
                              hyper.get("hidden_size", 128), hyper.get("dense_units", 64))
        for name, shape in shapes.items():
            if p[name].shape != shape:
                raise ValueError(f"{name} has shape {p[name].shape}, expected {shape}")
        theta = np.concatenate([np.ravel(p[name]) for name in shapes])
        return cls(theta, **hyper)

    def hyperparameters(self) -> dict:
        return {
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "hidden_size": self.hidden_size,
            "dense_units": self.dense_units,
            "dropout_p": self.dropout_p,
            "timesteps": self.timesteps,
        }

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.theta.copy(), **self.hyperparameters())


def init_model(input_size, num_classes, hidden_size=128, dense_units=64, dropout_p=0.2,
               timesteps=1, seed=0) -> ClassifierModel:
    """Uniform(-s, s) weights with ``s = 1/sqrt(fan_in)``, forget bias 1."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(input_size, num_classes, hidden_size, dense_units)
    model = ClassifierModel(np.zeros(sum(int(np.prod(s)) for s in shapes.values())), input_size,
                            num_classes, hidden_size, dense_units, dropout_p, timesteps)
    p = model.params
    for name, fan_in in (("W", input_size), ("U", hidden_size), ("W1", hidden_size), ("W2", dense_units)):
        s = 1.0 / np.sqrt(fan_in)
        p[name][...] = rng.uniform(-s, s, size=p[name].shape)
    p["b_f"][...] = 1.0
    return model


def as_sequences(X, timesteps: int = 1) -> np.ndarray:
    """Reshape ``N x d`` rows into ``N x T x (d / T)`` sequences."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        return X
    n, d = X.shape
    if d % timesteps:
        raise ValueError(f"{d} features do not divide into {timesteps} timesteps")
    return X.reshape(n, timesteps, d // timesteps)


def _check(name, a):
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values in {name}")


def lstm_cell_forward(x_t, h_prev, c_prev, params):
    """One LSTM step for a batch of rows.

    ``params`` needs the stacked ``W``, ``U`` and ``b``. Returns
    ``(h_t, c_t, record)``; ``record`` keeps what the backward pass needs.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    W, U, b = params["W"], params["U"], params["b"]
    if x_t.shape[-1] != W.shape[1] or h_prev.shape[-1] != U.shape[1]:
        raise ValueError(
            f"input width {x_t.shape[-1]} / state width {h_prev.shape[-1]} do not match "
            f"parameters {W.shape}, {U.shape}"
        )
    h = U.shape[1]
    z = x_t @ W.T
    if h_prev.any():
        z += h_prev @ U.T
    z += b
    f = sigmoid(z[:, :h])
    i = sigmoid(z[:, h:2 * h])
    o = sigmoid(z[:, 2 * h:3 * h])
    g = np.tanh(z[:, 3 * h:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h_t = o * tc
    return h_t, c, {"x": x_t, "h_prev": h_prev, "c_prev": c_prev, "f": f, "i": i, "o": o, "g": g, "tc": tc}


def forward(model: ClassifierModel, batch, mode: str = "eval", rng=None):
    """Class probabilities for a ``B x T x d`` batch.

    In ``train`` mode a dropout mask is drawn from ``rng`` and kept units
    are scaled by ``1/(1-p)``; the cache for :func:`backward` is returned.
    ``eval`` mode returns ``(probs, None)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = as_sequences(batch, model.timesteps)
    _check("input", X)
    p = model.params
    B, T, _ = X.shape
    h = np.zeros((B, model.hidden_size))
    c = np.zeros((B, model.hidden_size))
    steps = []
    for t in range(T):
        h, c, rec = lstm_cell_forward(X[:, t, :], h, c, p)
        steps.append(rec)
    _check("lstm", h)

    scale = None
    if mode == "train" and model.dropout_p > 0:
        if rng is None:
            raise ValueError("train-mode forward with dropout needs an rng")
        keep = rng.random(h.shape) >= model.dropout_p
        scale = keep / (1.0 - model.dropout_p)
        hd = h * scale
    else:
        hd = h
    a1 = hd @ p["W1"].T + p["b1"]
    r1 = np.maximum(a1, 0.0)
    _check("dense1", r1)
    z = r1 @ p["W2"].T + p["b2"]
    _check("dense2", z)
    probs = softmax(z)
    if mode == "eval":
        return probs, None
    return probs, {"steps": steps, "h": h, "scale": scale, "hd": hd, "a1": a1, "r1": r1, "probs": probs}


def predict_logits(model: ClassifierModel, X) -> np.ndarray:
    """Eval-mode pre-softmax outputs."""
    X = as_sequences(X, model.timesteps)
    p = model.params
    h = np.zeros((len(X), model.hidden_size))
    c = np.zeros_like(h)
    for t in range(X.shape[1]):
        h, c, _ = lstm_cell_forward(X[:, t, :], h, c, p)
    r1 = np.maximum(h @ p["W1"].T + p["b1"], 0.0)
    return r1 @ p["W2"].T + p["b2"]


def cross_entropy(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def backward(model: ClassifierModel, cache, labels, out=None) -> dict:
    """Gradients of the mean cross-entropy w.r.t. every parameter.

    Returns a dict of named views into one flat gradient vector (available
    as ``grads["theta"]``), laid out like ``model.theta``. ``out`` may
    supply that vector to avoid an allocation.
    """
    if cache is None:
        raise ValueError("backward needs the cache of a train-mode forward pass")
    p = model.params
    labels = np.asarray(labels, dtype=np.int64)
    B = len(labels)
    flat = np.zeros_like(model.theta) if out is None else out
    flat[...] = 0.0
    grads = unflatten(flat, model.shapes)
    grads["theta"] = flat

    dz = cache["probs"].copy()
    dz[np.arange(B), labels] -= 1.0
    dz /= B
    np.matmul(dz.T, cache["r1"], out=grads["W2"])
    grads["b2"][...] = dz.sum(axis=0)
    da1 = (dz @ p["W2"]) * (cache["a1"] > 0)
    np.matmul(da1.T, cache["hd"], out=grads["W1"])
    grads["b1"][...] = da1.sum(axis=0)
    dh = da1 @ p["W1"]
    if cache["scale"] is not None:
        dh *= cache["scale"]

    h = model.hidden_size
    dc = np.zeros_like(dh)
    dpre = np.empty((B, 4 * h))
    for rec in reversed(cache["steps"]):
        f, i, o, g, tc = rec["f"], rec["i"], rec["o"], rec["g"], rec["tc"]
        dc += dh * o * (1.0 - tc * tc)
        dpre[:, :h] = dc * rec["c_prev"] * f * (1.0 - f)
        dpre[:, h:2 * h] = dc * g * i * (1.0 - i)
        dpre[:, 2 * h:3 * h] = dh * tc * o * (1.0 - o)
        dpre[:, 3 * h:] = dc * i * (1.0 - g * g)
        grads["W"] += dpre.T @ rec["x"]
        grads["b"] += dpre.sum(axis=0)
        if rec["h_prev"].any():
            grads["U"] += dpre.T @ rec["h_prev"]
        dh = dpre @ p["U"]
        dc = dc * f
    return grads


def save_model(model: ClassifierModel, path) -> None:
    meta = json.dumps({"version": CHECKPOINT_VERSION, **model.hyperparameters()})
    np.savez(path, __meta__=np.array(meta), theta=model.theta)


def load_model(path) -> ClassifierModel:
    with np.load(path) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.pop("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        theta = z["theta"].copy()
    return ClassifierModel(theta, **meta)
