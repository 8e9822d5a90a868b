"""Two-layer tanh perceptron with a linear skip path and hand-written
reverse-mode gradients."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Ws")


@dataclass
class MLP:
    """``y = W2 tanh(W1 x + b1) + b2 + Ws x`` applied to rows of ``x``."""

    W1: np.ndarray  # (hidden, d_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d_out, hidden)
    b2: np.ndarray  # (d_out,)
    Ws: np.ndarray  # (d_out, d_in), zero at init

    @staticmethod
    def init(d_in: int, d_hidden: int, d_out: int, seed: int = 0, out_scale: float = 0.1) -> "MLP":
        rng = np.random.default_rng(seed)
        return MLP(
            rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_hidden, d_in)),
            np.zeros(d_hidden),
            rng.normal(0.0, out_scale / np.sqrt(d_hidden), (d_out, d_hidden)),
            np.zeros(d_out),
            np.zeros((d_out, d_in)),
        )

    @staticmethod
    def zeros(d_in: int, d_hidden: int, d_out: int) -> "MLP":
        return MLP(np.zeros((d_hidden, d_in)), np.zeros(d_hidden), np.zeros((d_out, d_hidden)), np.zeros(d_out),
                   np.zeros((d_out, d_in)))

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: getattr(self, k).shape for k in PARAM_NAMES}

    @property
    def num_params(self) -> int:
        return sum(getattr(self, k).size for k in PARAM_NAMES)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "MLP":
        return MLP(*(getattr(self, k).copy() for k in PARAM_NAMES))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def with_flat(self, x: np.ndarray) -> "MLP":
        out, i = [], 0
        for k in PARAM_NAMES:
            shape = getattr(self, k).shape
            n = int(np.prod(shape))
            out.append(np.asarray(x[i:i + n], dtype=float).reshape(shape).copy())
            i += n
        return MLP(*out)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        """Returns outputs and the cache needed by :meth:`backward`."""
        x = np.atleast_2d(x)
        h = np.tanh(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2 + x @ self.Ws.T, (x, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: tuple, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients of ``sum(dy * y)``."""
        x, h = cache
        dy = np.atleast_2d(dy)
        dh = (dy @ self.W2) * (1.0 - h * h)
        return {"W1": dh.T @ x, "b1": dh.sum(axis=0), "W2": dy.T @ h, "b2": dy.sum(axis=0), "Ws": dy.T @ x}

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist() for k in PARAM_NAMES}, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MLP":
        d = json.loads(text)
        return MLP(*(np.asarray(d[k], dtype=float) for k in PARAM_NAMES))


class Adam:
    """Adam on parameter dictionaries (no weight decay)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] | None = None
        self.v: dict[str, np.ndarray] | None = None
        self.t = 0

    def step(self, model: MLP, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if self.m is None or self.v is None:
            self.m = {k: np.zeros_like(g) for k, g in grads.items()}
            self.v = {k: np.zeros_like(g) for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            step = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            setattr(model, k, getattr(model, k) - step)


class SGD:
    def __init__(self, lr: float = 1e-2):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr

    def step(self, model: MLP, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            setattr(model, k, getattr(model, k) - lr * g)
