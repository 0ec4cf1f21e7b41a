"""Perceptron and small feed-forward networks trained by SGD with exact backprop.

Layers compute a_k = act(W_k [a_{k-1}; 1]); the bias is the last column of each
weight matrix. Losses: squared (1/2 residual norm), logistic (cross-entropy on a
sigmoid output, 0/1 response), hinge (-1/+1 response, margin at the final
output). Gradients are exact, which the tests pin against central finite
differences.
"""
from dataclasses import dataclass, field

import numpy as np

_ACTIVATIONS = ("tanh", "sigmoid", "identity")
_LOSSES = ("squared", "logistic", "hinge")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _act_prime_from_output(name, a):
    # derivative written in terms of the activation value, not the pre-activation
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


@dataclass(frozen=True)
class NetworkSpec:
    sizes: tuple
    activations: tuple
    loss: str = "squared"

    def validate(self):
        if len(self.sizes) < 2 or any(int(p) < 1 for p in self.sizes):
            raise ValueError("sizes must list at least input and output widths, all >= 1")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation '{a}'")
        if self.loss not in _LOSSES:
            raise ValueError(f"unknown loss '{self.loss}'")
        if self.loss in ("logistic", "hinge") and self.sizes[-1] != 1:
            raise ValueError(f"{self.loss} loss needs a single output unit")
        if self.loss == "logistic" and self.activations[-1] != "sigmoid":
            raise ValueError("logistic loss needs a sigmoid output layer")
        return self


@dataclass
class Network:
    spec: NetworkSpec
    weights: list = field(default_factory=list)  # W_k is (p_k, p_{k-1}+1)

    def copy(self):
        return Network(self.spec, [w.copy() for w in self.weights])

    def as_dict(self):
        return {
            "sizes": [int(p) for p in self.spec.sizes],
            "activations": list(self.spec.activations),
            "loss": self.spec.loss,
            "weights": [[[float(v) for v in row] for row in w] for w in self.weights],
        }


def network_from_dict(d):
    spec = NetworkSpec(tuple(d["sizes"]), tuple(d["activations"]), d["loss"]).validate()
    weights = [np.asarray(w, dtype=float) for w in d["weights"]]
    net = Network(spec, weights)
    _check_shapes(net)
    return net


def _check_shapes(net):
    sizes = net.spec.sizes
    if len(net.weights) != len(sizes) - 1:
        raise ValueError("need one weight matrix per layer")
    for k, w in enumerate(net.weights):
        if w.shape != (sizes[k + 1], sizes[k] + 1):
            raise ValueError(
                f"layer {k} weights must be {(sizes[k + 1], sizes[k] + 1)}, got {w.shape}"
            )


def init_network(spec, seed=0):
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], bias column included."""
    spec.validate()
    rng = np.random.default_rng(seed)
    weights = []
    for p_in, p_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        bound = 1.0 / np.sqrt(p_in + 1)
        weights.append(rng.uniform(-bound, bound, size=(p_out, p_in + 1)))
    return Network(spec, weights)


def _augment(a):
    return np.hstack([a, np.ones((a.shape[0], 1))])


def forward(net, x):
    """All layer outputs [a_0 .. a_K], each n-by-width; a_0 is the input."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    outs = [a]
    for w, name in zip(net.weights, net.spec.activations):
        a = _act(name, _augment(a) @ w.T)
        outs.append(a)
    return outs


def network_predict(net, x):
    out = forward(net, x)[-1]
    return out[:, 0] if out.shape[1] == 1 else out


def _target_matrix(net, y):
    y = np.asarray(y, dtype=float)
    t = y.reshape(-1, 1) if y.ndim == 1 else y
    if net.spec.loss == "logistic" and not set(np.unique(t)) <= {0.0, 1.0}:
        raise ValueError("logistic loss needs 0/1 targets")
    if net.spec.loss == "hinge" and not set(np.unique(t)) <= {-1.0, 1.0}:
        raise ValueError("hinge loss needs -1/+1 targets")
    return t


def network_risk(net, x, y):
    """Mean per-example loss over the batch."""
    t = _target_matrix(net, y)
    a = forward(net, x)[-1]
    if net.spec.loss == "squared":
        with np.errstate(over="ignore"):  # inf risk is the right answer mid-divergence
            return float(0.5 * np.sum((t - a) ** 2) / a.shape[0])
    if net.spec.loss == "logistic":
        a_c = np.clip(a, 1e-12, 1.0 - 1e-12)  # saturated units must not yield inf
        return float(-np.mean(t * np.log(a_c) + (1 - t) * np.log1p(-a_c)))
    return float(np.mean(np.maximum(0.0, 1.0 - t * a)))


def gradient(net, x, y):
    """Exact backprop gradient of the mean risk; one array per weight matrix."""
    t = _target_matrix(net, y)
    outs = forward(net, x)
    n = outs[0].shape[0]
    a_out = outs[-1]
    last = net.spec.activations[-1]
    if net.spec.loss == "squared":
        delta = (a_out - t) * _act_prime_from_output(last, a_out)
    elif net.spec.loss == "logistic":
        delta = a_out - t
    else:
        subgrad = np.where(t * a_out < 1.0, -t, 0.0)
        delta = subgrad * _act_prime_from_output(last, a_out)
    grads = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        grads[k] = delta.T @ _augment(outs[k]) / n
        if k > 0:
            back = delta @ net.weights[k][:, :-1]
            delta = back * _act_prime_from_output(net.spec.activations[k - 1], outs[k])
    return grads


def train(net, dm, epochs, gamma0=0.1, lambda0=0.0, seed=0):
    """Per-example SGD with a per-epoch shuffle; mutates net, returns the risk trace.

    The step in epoch e is gamma0 / (1 + lambda0 * e). The trace holds the
    initial risk followed by the risk after each epoch.
    """
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    x = np.asarray(dm.x, dtype=float)
    t = _target_matrix(net, dm.y)
    rng = np.random.default_rng(seed)
    trace = [network_risk(net, x, t)]
    n = x.shape[0]
    for e in range(epochs):
        step = gamma0 / (1.0 + lambda0 * e)
        for i in rng.permutation(n):
            row_x = x[i : i + 1]
            row_t = t[i : i + 1]
            for w, g in zip(net.weights, gradient(net, row_x, row_t)):
                w -= step * g
        if not all(np.all(np.isfinite(w)) for w in net.weights):
            raise ValueError(
                "training diverged to non-finite weights; lower the learning rate"
            )
        trace.append(network_risk(net, x, t))
    return np.asarray(trace)


@dataclass(frozen=True)
class PerceptronFit:
    weights: np.ndarray
    bias: float
    converged: bool
    n_epochs: int
    column_names: tuple


def _pm_view(dm):
    y = np.asarray(dm.y, dtype=float)
    vals = set(np.unique(y))
    if vals <= {0.0, 1.0}:
        y = dm.y_pm
        vals = set(np.unique(y))
    if not vals <= {-1.0, 1.0}:
        raise ValueError("perceptron needs a two-class 0/1 or -1/+1 response")
    return y


def fit_perceptron(dm, eta=1.0, max_epochs=100):
    """Cyclic mistake-driven updates; stops at the first error-free pass."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    y = _pm_view(dm)
    x = _augment(np.asarray(dm.x, dtype=float))
    w = np.zeros(x.shape[1])
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        mistakes = 0
        for i in range(x.shape[0]):
            if y[i] * (x[i] @ w) <= 0.0:
                w = w + eta * y[i] * x[i]
                mistakes += 1
        if mistakes == 0:
            converged = True
            break
    return PerceptronFit(w[:-1].copy(), float(w[-1]), converged, epoch, dm.column_names)


def perceptron_predict(fit, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.where(x @ fit.weights + fit.bias >= 0.0, 1.0, -1.0)
