"""
Feature networks with hand-written forward and backward passes.

A ``FeatureNet`` is a small MLP over a fixed input table (one row per state,
or per state-action pair for discriminators). Hidden layers use the
configured activation and the output layer is linear. ``RewardModel`` adds
the linear head: ``r(item) = head . phi(item)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..exceptions import DatasetFormatError, InvalidInputError, UsageError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ciirl-checkpoint"
CHECKPOINT_VERSION = 1


def _tanh(z):
    return np.tanh(z)


def _tanh_d1(z):
    return 1.0 - np.tanh(z) ** 2


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t ** 2)


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_d1, _tanh_d2),
    "identity": (lambda z: z, np.ones_like, np.zeros_like),
}


@dataclass(frozen=True)
class NetworkConfig:
    hidden: Tuple[int, ...] = (1,)
    output_dim: int = 1
    activation: str = "tanh"
    encoding: str = "coordinates"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"Unknown activation '{self.activation}'.")
        if self.output_dim < 0 or any(h < 1 for h in self.hidden):
            raise InvalidInputError("Layer widths must be positive.")

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def to_dict(self):
        return {"hidden": list(self.hidden), "output_dim": self.output_dim,
                "activation": self.activation, "encoding": self.encoding}


class FeatureNet:
    """
    MLP ``phi`` evaluated on rows of ``inputs``.

    ``forward`` caches the activations of the rows it evaluated; ``backward``
    must be called with the same rows.
    """

    def __init__(self, inputs, hidden=(1,), output_dim=1, activation="tanh", seed=0, encoding="custom"):
        if activation not in ACTIVATIONS:
            raise InvalidInputError(f"Unknown activation '{activation}'.")
        self.inputs = np.asarray(inputs, dtype=float)
        self.activation = activation
        self.encoding = encoding
        sizes = [self.inputs.shape[1], *hidden, output_dim]
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in) if fan_in else 0.0
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache = None

    @classmethod
    def from_config(cls, inputs, config, seed=0):
        return cls(inputs, config.hidden, config.output_dim, config.activation, seed, config.encoding)

    @classmethod
    def from_layers(cls, inputs, weights, biases, activation="tanh", encoding="custom"):
        net = cls.__new__(cls)
        net.inputs = np.asarray(inputs, dtype=float)
        net.activation = activation
        net.encoding = encoding
        net.weights = [np.array(w, dtype=float) for w in weights]
        net.biases = [np.array(b, dtype=float) for b in biases]
        net._cache = None
        prev = net.inputs.shape[1]
        for w, b in zip(net.weights, net.biases):
            if w.shape[1] != prev or b.shape != (w.shape[0],):
                raise InvalidInputError("Layer shapes do not chain.")
            prev = w.shape[0]
        return net

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def n_items(self):
        return self.inputs.shape[0]

    def parameters(self):
        """Weights and biases interleaved, layer by layer."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def parameter_names(self):
        names = []
        for i in range(len(self.weights)):
            names.extend([f"layer{i}.weight", f"layer{i}.bias"])
        return names

    def clone(self):
        return FeatureNet.from_layers(self.inputs, self.weights, self.biases, self.activation, self.encoding)

    def _run(self, x):
        act = ACTIVATIONS[self.activation][0]
        hs, zs = [x], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = hs[-1] @ w.T + b
            zs.append(z)
            hs.append(z if i == last else act(z))
        return hs, zs

    def forward_inputs(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        hs, zs = self._run(x)
        self._cache = (None, hs, zs)
        return hs[-1]

    def forward(self, items=None):
        """Features of the given rows of the input table (all rows by default)."""
        items = np.arange(self.n_items) if items is None else np.atleast_1d(np.asarray(items, dtype=int))
        hs, zs = self._run(self.inputs[items])
        self._cache = (items, hs, zs)
        return hs[-1]

    def backward(self, upstream, items=None):
        """
        Gradients of ``sum_n upstream[n] . phi(x_n)`` for every parameter, in
        ``parameters()`` order.
        """
        if self._cache is None:
            raise UsageError("backward called before forward.")
        cached_items, hs, zs = self._cache
        if items is not None or cached_items is not None:
            expected = np.arange(self.n_items) if items is None else np.atleast_1d(np.asarray(items, dtype=int))
            if cached_items is None or not np.array_equal(expected, cached_items):
                raise UsageError("backward called with items that do not match the cached forward pass.")
        delta = np.asarray(upstream, dtype=float).reshape(hs[-1].shape)
        d1 = ACTIVATIONS[self.activation][1]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ hs[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * d1(zs[i - 1])
        return grads

    def input_gradient(self, x, head):
        """Rows of ``d (head . phi(x)) / dx``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        hs, zs = self._run(x)
        d1 = ACTIVATIONS[self.activation][1]
        delta = np.broadcast_to(np.asarray(head, dtype=float), hs[-1].shape)
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * d1(zs[i - 1])
        return delta

    def directional_param_grad(self, x, direction, head):
        """
        Gradient of ``sum_n head . J_phi(x_n) direction_n`` with respect to the
        parameters and the head. Forward-mode tangents followed by a reverse
        sweep; this is what the input-gradient penalty needs.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        head = np.asarray(head, dtype=float)
        act, d1, d2 = ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        hs, dhs, zs, dzs = [x], [np.asarray(direction, dtype=float).reshape(x.shape)], [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = hs[-1] @ w.T + b
            dz = dhs[-1] @ w.T
            zs.append(z)
            dzs.append(dz)
            if i == last:
                hs.append(z)
                dhs.append(dz)
            else:
                hs.append(act(z))
                dhs.append(d1(z) * dz)

        grads = [None] * (2 * len(self.weights))
        z_bar = np.zeros_like(zs[-1])
        dz_bar = np.broadcast_to(head, dzs[-1].shape)
        for i in range(last, -1, -1):
            grads[2 * i] = z_bar.T @ hs[i] + dz_bar.T @ dhs[i]
            grads[2 * i + 1] = z_bar.sum(axis=0)
            if i > 0:
                h_bar = z_bar @ self.weights[i]
                dh_bar = dz_bar @ self.weights[i]
                dz_bar = dh_bar * d1(zs[i - 1])
                z_bar = h_bar * d1(zs[i - 1]) + dh_bar * d2(zs[i - 1]) * dzs[i - 1]
        head_grad = dhs[-1].sum(axis=0)
        return grads, head_grad


class RewardModel:
    """Feature network plus linear head; ``reward()`` is ``phi @ head``."""

    def __init__(self, net, head=None):
        self.net = net
        self.head = np.ones(net.output_dim) if head is None else np.asarray(head, dtype=float)
        if self.head.shape != (net.output_dim,):
            raise InvalidInputError(f"Head must have shape ({net.output_dim},), got {self.head.shape}.")

    def features(self, items=None):
        return self.net.forward(items)

    def reward(self, items=None):
        phi = self.features(items)
        values = phi @ self.head
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Reward model produced non-finite values.")
        return values

    def parameters(self):
        return self.net.parameters() + [self.head]

    def parameter_names(self):
        return self.net.parameter_names() + ["head"]

    def clone(self):
        return RewardModel(self.net.clone(), self.head.copy())


def rmsprop_step(params, grads, accumulators, lr=1e-3, decay=0.99, eps=1e-8):
    """One RMSProp step. Updates ``params`` and ``accumulators`` in place."""
    for p, g, acc in zip(params, grads, accumulators):
        acc *= decay
        acc += (1.0 - decay) * g * g
        p -= lr * g / (np.sqrt(acc) + eps)
    return params, accumulators


class RMSProp:
    def __init__(self, params, lr=1e-3, decay=0.99, eps=1e-8):
        self.params = params
        self.lr, self.decay, self.eps = lr, decay, eps
        self.accumulators = [np.zeros_like(p) for p in params]

    def step(self, grads):
        rmsprop_step(self.params, grads, self.accumulators, self.lr, self.decay, self.eps)


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _tensor(name, array):
    array = np.asarray(array, dtype=float)
    return {"name": name, "shape": list(array.shape), "data": array.ravel().tolist()}


def checkpoint_dict(model, kind="reward-model", extra=None):
    """JSON-ready checkpoint; floats survive a json round trip exactly."""
    tensors = [_tensor("inputs", model.net.inputs)]
    tensors += [_tensor(n, p) for n, p in zip(model.parameter_names(), model.parameters())]
    data = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "activation": model.net.activation,
        "encoding": model.net.encoding,
        "tensors": tensors,
    }
    if extra:
        data["extra"] = extra
    return data


def model_from_checkpoint(data):
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise DatasetFormatError("Not a ciirl checkpoint (format/version mismatch).")
    try:
        tensors = {t["name"]: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for t in data["tensors"]}
        n_layers = sum(1 for name in tensors if name.endswith(".weight"))
        weights = [tensors[f"layer{i}.weight"] for i in range(n_layers)]
        biases = [tensors[f"layer{i}.bias"] for i in range(n_layers)]
        net = FeatureNet.from_layers(tensors["inputs"], weights, biases, data["activation"], data["encoding"])
        return RewardModel(net, tensors["head"])
    except (KeyError, ValueError, TypeError) as e:
        raise DatasetFormatError(f"Malformed checkpoint: {e}") from e


def save_checkpoint(fileobj, model, kind="reward-model", extra=None):
    json.dump(checkpoint_dict(model, kind, extra), fileobj, sort_keys=True)
    fileobj.write("\n")


def load_checkpoint(fileobj):
    try:
        data = json.load(fileobj)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Checkpoint is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise DatasetFormatError("Checkpoint must be a JSON object.")
    return model_from_checkpoint(data), data.get("kind"), data.get("extra", {})
