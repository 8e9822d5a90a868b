"""Toy flow-matching generator over layout vectors.

The generator works on standardized vectors ``z = (x - shift) / scale`` (a
fixed per-feature affine map, identity by default). Noising path:
``z_t = (1 - t) z + t eps`` with the network predicting ``eps`` from
``(z_t, t)``. Sampling integrates the implied probability-flow ODE
``dz/dt = (eps_hat - z) / (1 - t)`` backwards with Euler steps, starting from
standard-normal noise at ``t_max = 1 - 1/N``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mlp import MLP, Adam
from .template import SceneTemplate, get_template

HIDDEN = 64
SAMPLE_STEPS = 20
MIN_FEATURE_SCALE = 0.05


@dataclass
class ToyGenerator:
    template: SceneTemplate
    net: MLP
    shift: np.ndarray | None = None  # per-feature standardization; None = identity
    scale: np.ndarray | None = None

    @staticmethod
    def create(template: SceneTemplate, seed: int = 0, hidden: int = HIDDEN) -> "ToyGenerator":
        return ToyGenerator(template, MLP.init(template.dim + 1, hidden, template.dim, seed))

    @staticmethod
    def zero(template: SceneTemplate, hidden: int = HIDDEN) -> "ToyGenerator":
        return ToyGenerator(template, MLP.zeros(template.dim + 1, hidden, template.dim))

    @property
    def dim(self) -> int:
        return self.template.dim

    def copy(self) -> "ToyGenerator":
        return ToyGenerator(self.template, self.net.copy(),
                            None if self.shift is None else self.shift.copy(),
                            None if self.scale is None else self.scale.copy())

    def fit_normalization(self, data: np.ndarray) -> None:
        """Standardize features by the data mean and std (std floored at
        ``MIN_FEATURE_SCALE`` so constant features stay finite)."""
        data = np.atleast_2d(data)
        self.shift = data.mean(axis=0)
        self.scale = np.maximum(data.std(axis=0), MIN_FEATURE_SCALE)

    def to_latent(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x if self.shift is None else (x - self.shift) / self.scale

    def from_latent(self, z: np.ndarray) -> np.ndarray:
        return z if self.shift is None else z * self.scale + self.shift

    def predict(self, xt: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, tuple]:
        inp = np.concatenate([np.atleast_2d(xt), np.reshape(t, (-1, 1))], axis=1)
        return self.net.forward(inp)

    def to_json(self) -> str:
        return json.dumps({
            "template": self.template.name,
            "net": json.loads(self.net.to_json()),
            "shift": None if self.shift is None else self.shift.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ToyGenerator":
        d = json.loads(text)
        norm = [None if d.get(k) is None else np.asarray(d[k], dtype=float) for k in ("shift", "scale")]
        return ToyGenerator(get_template(d["template"]), MLP.from_json(json.dumps(d["net"])), *norm)


def fm_draws(dim: int, samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``(t, eps)`` pairs used by :func:`fm_loss` for a given seed."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, samples), rng.standard_normal((samples, dim))


def _fm_terms(gen: ToyGenerator, x: np.ndarray, t: np.ndarray, eps: np.ndarray):
    """Row-wise squared errors ``||eps_hat(x_t, t) - eps||^2`` and the cache."""
    xt = (1.0 - t)[:, None] * x + t[:, None] * eps
    pred, cache = gen.predict(xt, t)
    err = pred - eps
    return (err * err).sum(axis=1), err, cache


def fm_losses(gen: ToyGenerator, X: np.ndarray, samples: int, seed: int,
              weights: np.ndarray | None = None) -> tuple[np.ndarray, dict[str, np.ndarray] | None]:
    """Flow-matching loss of each row of ``X`` using the same ``samples``
    draws of ``(t, eps)`` for every row. With ``weights``, also returns the
    parameter gradient of ``sum_k weights[k] * loss[k]``."""
    X = gen.to_latent(np.atleast_2d(np.asarray(X, dtype=float)))
    k, dim = X.shape
    t, eps = fm_draws(dim, samples, seed)
    xr = np.repeat(X, samples, axis=0)
    tr = np.tile(t, k)
    er = np.tile(eps, (k, 1))
    sq, err, cache = _fm_terms(gen, xr, tr, er)
    losses = sq.reshape(k, samples).mean(axis=1)
    if weights is None:
        return losses, None
    w = np.repeat(np.asarray(weights, dtype=float), samples) * (2.0 / samples)
    return losses, gen.net.backward(cache, w[:, None] * err)


def fm_loss(gen: ToyGenerator, x: np.ndarray, samples: int, seed: int) -> float:
    """Monte-Carlo flow-matching loss of one layout vector."""
    return float(fm_losses(gen, x, samples, seed)[0][0])


def sample_many(gen: ToyGenerator, seeds, steps: int = SAMPLE_STEPS) -> np.ndarray:
    """One layout vector per seed (the seed fixes the starting noise)."""
    z = np.stack([np.random.default_rng(int(s)).standard_normal(gen.dim) for s in seeds])
    ts = np.linspace(1.0 - 1.0 / steps, 0.0, steps + 1)
    for t, t_next in zip(ts[:-1], ts[1:]):
        eps_hat, _ = gen.predict(z, np.full(len(z), t))
        z = ((1.0 - t_next) * z + (t_next - t) * eps_hat) / (1.0 - t)
    return gen.from_latent(z)


def sample(gen: ToyGenerator, seed: int, steps: int = SAMPLE_STEPS) -> np.ndarray:
    return sample_many(gen, [seed], steps)[0]


def pretrain(gen: ToyGenerator, data: np.ndarray, steps: int = 20000, batch: int = 256, lr: float = 1e-2,
             seed: int = 0, high_t_fraction: float = 0.5, high_t_min: float = 0.8) -> list[float]:
    """Plain flow-matching training (independent ``(t, eps)`` per example) with
    Adam and a cosine learning-rate decay. Returns the per-step loss.

    A ``high_t_fraction`` of the times is drawn from ``[high_t_min, 1)``
    instead of ``[0, 1)``: the sampler's first steps divide by ``1 - t``, so
    prediction errors there dominate sample quality while contributing little
    to the uniform-time loss."""
    rng = np.random.default_rng(seed)
    data = gen.to_latent(np.atleast_2d(data))
    opt = Adam(lr)
    history = []
    for step in range(steps):
        idx = rng.integers(0, len(data), batch)
        x = data[idx]
        t = rng.uniform(0.0, 1.0, batch)
        high = rng.random(batch) < high_t_fraction
        t[high] = rng.uniform(high_t_min, 1.0, int(high.sum()))
        eps = rng.standard_normal(x.shape)
        sq, err, cache = _fm_terms(gen, x, t, eps)
        grads = gen.net.backward(cache, (2.0 / batch) * err)
        opt.step(gen.net, grads, lr * 0.5 * (1.0 + np.cos(np.pi * step / steps)))
        history.append(float(sq.mean()))
    return history
