"""Group-relative preference training of the toy generator.

Each step draws a candidate group (policy samples plus perturbed EMA samples),
scores it with the physics reward, standardizes the rewards into advantages,
and reports the group loss

    L = (1/K) sum_k (-A_k) l_k + w_kl * KL(p || q),
    p = softmax(-l / tau),  q = softmax(r / tau),

where ``l_k`` is the Monte-Carlo flow-matching loss of candidate ``k``.

The first term is the group-relative surrogate ``sum_k A_k log pi(S_k)`` with
``log pi`` replaced by ``-l``; it is an objective to raise, since preferred
candidates must end up with lower flow-matching loss. Descending it literally
would push those candidates away, against the KL term (whose ``p`` already
treats low loss as high preference). Training therefore descends

    J = (1/K) sum_k A_k l_k + w_kl * KL(p || q).

The surrogate is unbounded below (any candidate's loss can be inflated without
limit), so training clips it against the EMA reference in the manner of a
proximal policy update: a candidate stops contributing surrogate gradient once
its loss has moved more than a relative ``clip_epsilon`` from the reference
model's loss in the direction its advantage asks for. Rewards are constants;
gradients flow only through the ``l_k``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax
from scipy.stats import kendalltau, spearmanr

from ..evaluator import CONSTRAINTS, EvaluatorConfig, reward
from .flow import SAMPLE_STEPS, ToyGenerator, fm_losses, sample_many
from .mlp import PARAM_NAMES, SGD, Adam
from .template import FEATURES

POLICY = "policy-sample"
PERTURBED = "ema-perturbed"
TIE_STD = 1e-8

# Dynamic settling and reachability are orders of magnitude slower than the
# other checks and carry no signal on the toy template (three floor objects in
# an open room), so the training reward leaves them out.
GRPO_REWARD_CONFIG = EvaluatorConfig(
    enabled=tuple(c for c in CONSTRAINTS if c not in ("dynamic", "reach")),
    surface_samples=128,
)


@dataclass(frozen=True)
class Perturbation:
    """Half-widths of the uniform per-object perturbation of EMA samples."""

    translation: float = 0.10
    yaw: float = math.radians(10.0)
    log_scale: float = 0.05

    def __post_init__(self):
        if min(self.translation, self.yaw, self.log_scale) < 0:
            raise ValueError("perturbation ranges must be non-negative")


def perturb(vec: np.ndarray, ranges: Perturbation, rng: np.random.Generator) -> np.ndarray:
    """Uniform jitter of every object's center, yaw and log-scale. The
    reserved feature is left untouched."""
    v = np.array(vec, dtype=float).reshape(-1, FEATURES)
    n = len(v)
    dt = rng.uniform(-1.0, 1.0, (n, 3)) * ranges.translation
    dyaw = rng.uniform(-1.0, 1.0, n) * ranges.yaw
    dl = rng.uniform(-1.0, 1.0, n) * ranges.log_scale
    if ranges.translation > 0:
        v[:, 0:3] += dt
    if ranges.yaw > 0:
        yaw = np.arctan2(v[:, 3], v[:, 4]) + dyaw
        v[:, 3], v[:, 4] = np.sin(yaw), np.cos(yaw)
    if ranges.log_scale > 0:
        v[:, 5] += dl
    return v.reshape(-1)


@dataclass
class CandidateGroup:
    vectors: np.ndarray  # (K, dim)
    losses: np.ndarray  # flow-matching loss per candidate
    rewards: np.ndarray
    advantages: np.ndarray
    provenance: tuple[str, ...]
    reference: np.ndarray  # the EMA sample rewards are aligned against
    fm_seed: int  # seed of the shared (t, eps) draws behind ``losses``

    @property
    def K(self) -> int:
        return len(self.losses)


def advantages(rewards) -> np.ndarray:
    """Group-standardized rewards using the population standard deviation;
    all zeros when the rewards are (numerically) tied."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 1:
        raise ValueError("rewards must be a non-empty 1-D sequence")
    sd = float(r.std())
    if not sd >= TIE_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / sd


def _candidates(gen: ToyGenerator, ema: ToyGenerator, K: int, ranges: Perturbation,
                rng: np.random.Generator, steps: int) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    if K < 2:
        raise ValueError("group size K must be at least 2")
    n_policy, n_ema = (K + 1) // 2, K // 2
    seeds = rng.integers(0, 2**31 - 1, K)
    policy = sample_many(gen, seeds[:n_policy], steps)
    base = sample_many(ema, seeds[n_policy:], steps)
    perturbed = np.stack([perturb(b, ranges, rng) for b in base])
    vectors = np.concatenate([policy, perturbed])
    provenance = (POLICY,) * n_policy + (PERTURBED,) * n_ema
    return vectors, provenance, base[0]


def make_group(gen: ToyGenerator, ema: ToyGenerator, K: int = 12, ranges: Perturbation = Perturbation(),
               seed: int = 0, reward_config: EvaluatorConfig = GRPO_REWARD_CONFIG, fm_samples: int = 16,
               sample_steps: int = SAMPLE_STEPS) -> CandidateGroup:
    """``ceil(K/2)`` policy samples and ``floor(K/2)`` perturbed EMA samples,
    scored by flow-matching loss (shared draws) and by the reward against the
    first unperturbed EMA sample."""
    rng = np.random.default_rng(seed)
    vectors, provenance, ref_vec = _candidates(gen, ema, K, ranges, rng, sample_steps)
    fm_seed = int(rng.integers(0, 2**31 - 1))
    losses, _ = fm_losses(gen, vectors, fm_samples, fm_seed)
    template = gen.template
    ref_scene = template.decode(ref_vec)
    rewards = np.array([reward(template.decode(v), ref_scene, reward_config) for v in vectors])
    return CandidateGroup(vectors, losses, rewards, advantages(rewards), provenance, ref_vec, fm_seed)


def _kl_parts(losses: np.ndarray, rewards: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """KL(p || q) and its gradient with respect to the losses."""
    log_p = log_softmax(-np.asarray(losses, dtype=float) / tau)
    log_q = log_softmax(np.asarray(rewards, dtype=float) / tau)
    p = np.exp(log_p)
    diff = log_p - log_q
    kl = float(max(np.dot(p, diff), 0.0))
    return kl, -(p * (diff - kl)) / tau


def grpo_loss(group: CandidateGroup, tau: float = 1.0, kl_weight: float = 1.0) -> tuple[float, dict[str, float]]:
    """Advantage-weighted flow-matching loss plus the KL alignment term."""
    if not tau > 0:
        raise ValueError("temperature tau must be positive")
    weighted = float(np.mean(-group.advantages * group.losses))
    kl, _ = _kl_parts(group.losses, group.rewards, tau)
    return weighted + kl_weight * kl, {"weighted_fm": weighted, "kl": kl}


def training_objective(group: CandidateGroup, tau: float = 1.0, kl_weight: float = 1.0) -> float:
    """The descended objective ``J``: the surrogate term with its sign turned
    into a loss, plus the weighted KL term."""
    _, parts = grpo_loss(group, tau, kl_weight)
    return -parts["weighted_fm"] + kl_weight * parts["kl"]


def trust_region_mask(adv: np.ndarray, losses: np.ndarray, ref_losses: np.ndarray, epsilon: float) -> np.ndarray:
    """1 where a candidate's surrogate term stays active, 0 where its loss has
    already left the band ``ref * (1 +- epsilon)`` in the direction its
    advantage pushes (down for ``A > 0``, up for ``A < 0``)."""
    adv, losses, ref = (np.asarray(a, dtype=float) for a in (adv, losses, ref_losses))
    pushed_down = (adv > 0) & (losses < ref * (1.0 - epsilon))
    pushed_up = (adv < 0) & (losses > ref * (1.0 + epsilon))
    return (~(pushed_down | pushed_up)).astype(float)


def loss_weights(group: CandidateGroup, tau: float = 1.0, kl_weight: float = 1.0,
                 active: np.ndarray | None = None) -> np.ndarray:
    """``dJ/dl_k``: the per-candidate weights of the flow-matching losses in
    the parameter gradient. ``active`` masks the surrogate term per candidate
    (see :func:`trust_region_mask`)."""
    if not tau > 0:
        raise ValueError("temperature tau must be positive")
    _, dkl = _kl_parts(group.losses, group.rewards, tau)
    surrogate = group.advantages / group.K
    if active is not None:
        surrogate = surrogate * active
    return surrogate + kl_weight * dkl


def grpo_gradient(gen: ToyGenerator, group: CandidateGroup, tau: float = 1.0, kl_weight: float = 1.0,
                  fm_samples: int = 16, active: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Parameter gradient of :func:`training_objective` by reverse mode
    through each candidate's flow-matching loss."""
    w = loss_weights(group, tau, kl_weight, active)
    _, grads = fm_losses(gen, group.vectors, fm_samples, group.fm_seed, weights=w)
    assert grads is not None
    return grads


@dataclass(frozen=True)
class GrpoConfig:
    steps: int = 500
    K: int = 12
    tau: float = 1.0
    ema_decay: float = 0.99
    lr: float = 1e-4
    clip_epsilon: float = 0.1  # relative trust region around the EMA loss; 0 disables
    seed: int = 0
    fm_samples: int = 16
    kl_start: float = 1.0
    kl_end: float = 0.1
    optimizer: str = "adam"  # or "sgd"
    perturbation: Perturbation = Perturbation()
    sample_steps: int = SAMPLE_STEPS
    reward_config: EvaluatorConfig = GRPO_REWARD_CONFIG
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    proxy_groups: int = 0  # groups for the proxy check at each checkpoint

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.K < 2:
            raise ValueError("group size K must be at least 2")
        if not self.tau > 0:
            raise ValueError("temperature tau must be positive")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.clip_epsilon >= 0:
            raise ValueError("clip_epsilon must be non-negative")
        if self.fm_samples < 1:
            raise ValueError("fm_samples must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def kl_weight(self, step: int) -> float:
        """Linear decay from ``kl_start`` to ``kl_end`` over training."""
        if self.steps <= 1:
            return self.kl_start
        return self.kl_start + (self.kl_end - self.kl_start) * step / (self.steps - 1)


HISTORY_COLUMNS = ("step", "mean_reward", "policy_reward", "mean_fm", "loss", "objective", "weighted_fm", "kl",
                   "kl_weight", "clipped", "spearman", "kendall")


@dataclass
class TrainResult:
    generator: ToyGenerator
    ema: ToyGenerator
    history: list[dict[str, float]]
    checkpoints: list[tuple[int, str]] = field(default_factory=list)  # (step, generator JSON)
    halted: bool = False

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: list[dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow(["" if row.get(c) is None else (row[c] if c == "step" else repr(float(row[c])))
                    for c in HISTORY_COLUMNS])
    return buf.getvalue()


def ema_update(ema: ToyGenerator, gen: ToyGenerator, decay: float) -> None:
    for k in PARAM_NAMES:
        setattr(ema.net, k, decay * getattr(ema.net, k) + (1.0 - decay) * getattr(gen.net, k))


def train(gen: ToyGenerator, config: GrpoConfig = GrpoConfig()) -> TrainResult:
    """Scene-GRPO fine-tuning of a (pretrained) generator. The input generator
    is not modified. A non-finite loss or gradient halts training and returns
    the last finite parameters."""
    gen = gen.copy()
    ema = gen.copy()
    opt = Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)
    seeds = np.random.SeedSequence(config.seed).generate_state(max(config.steps, 1), dtype=np.uint32)
    history: list[dict[str, float]] = []
    checkpoints: list[tuple[int, str]] = []
    for step in range(config.steps):
        group = make_group(gen, ema, config.K, config.perturbation, int(seeds[step]), config.reward_config,
                           config.fm_samples, config.sample_steps)
        kw = config.kl_weight(step)
        loss, parts = grpo_loss(group, config.tau, kw)
        objective = -parts["weighted_fm"] + kw * parts["kl"]
        active = None
        if config.clip_epsilon > 0:
            ref_losses, _ = fm_losses(ema, group.vectors, config.fm_samples, group.fm_seed)
            active = trust_region_mask(group.advantages, group.losses, ref_losses, config.clip_epsilon)
        grads = grpo_gradient(gen, group, config.tau, kw, config.fm_samples, active)
        finite = math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
        if not finite:
            return TrainResult(gen, ema, history, checkpoints, halted=True)
        previous = gen.copy()
        opt.step(gen.net, grads)
        if not all(np.all(np.isfinite(v)) for v in gen.net.params().values()):
            return TrainResult(previous, ema, history, checkpoints, halted=True)
        ema_update(ema, gen, config.ema_decay)
        policy = [r for r, p in zip(group.rewards, group.provenance) if p == POLICY]
        row = {"step": step, "mean_reward": float(group.rewards.mean()), "policy_reward": float(np.mean(policy)),
               "mean_fm": float(group.losses.mean()),
               "loss": loss, "objective": objective, "weighted_fm": parts["weighted_fm"], "kl": parts["kl"], "kl_weight": kw,
               "clipped": 0.0 if active is None else float(1.0 - active.mean()), "spearman": None, "kendall": None}
        last = step == config.steps - 1
        if config.checkpoint_every and ((step + 1) % config.checkpoint_every == 0 or last):
            checkpoints.append((step + 1, gen.to_json()))
            if config.proxy_groups:
                pv = proxy_validation(gen, config.proxy_groups, config.fm_samples, seed=int(seeds[step]),
                                      K=config.K, ranges=config.perturbation, sample_steps=config.sample_steps)
                row["spearman"], row["kendall"] = pv["spearman"], pv["kendall"]
        history.append(row)
    return TrainResult(gen, ema, history, checkpoints)


def moving_average(values, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if window < 1 or len(v) < window:
        raise ValueError("need at least `window` values")
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


def _rank_corr(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Spearman rho and Kendall tau-b with average ranks for ties. A constant
    ranking carries no order information: two constant rankings agree
    (1.0), one constant against a non-constant one scores 0.0."""
    ca, cb = np.ptp(a) == 0, np.ptp(b) == 0
    if ca or cb:
        return (1.0, 1.0) if ca and cb else (0.0, 0.0)
    return float(spearmanr(a, b).statistic), float(kendalltau(a, b, variant="b").statistic)


def proxy_validation(gen: ToyGenerator, groups: int = 100, M_proxy: int = 16, M_ref: int = 1024, seed: int = 0,
                     K: int = 12, ranges: Perturbation = Perturbation(), shared_draws: bool = False,
                     sample_steps: int = SAMPLE_STEPS) -> dict[str, float]:
    """Rank consistency between the ``M_proxy``-draw flow-matching score and
    the ``M_ref``-draw reference score over candidate groups drawn from
    ``gen`` (which also serves as its own EMA). With ``shared_draws`` both
    scores use the same seed for their ``(t, eps)`` draws."""
    if groups < 1:
        raise ValueError("groups must be at least 1")
    rng = np.random.default_rng(seed)
    rhos, taus = [], []
    for _ in range(groups):
        vectors, _, _ = _candidates(gen, gen, K, ranges, rng, sample_steps)
        s_proxy, s_ref = (int(x) for x in rng.integers(0, 2**31 - 1, 2))
        if shared_draws:
            s_ref = s_proxy
        proxy = -fm_losses(gen, vectors, M_proxy, s_proxy)[0]
        ref = -fm_losses(gen, vectors, M_ref, s_ref)[0]
        rho, tau_b = _rank_corr(proxy, ref)
        rhos.append(rho)
        taus.append(tau_b)
    return {"spearman": float(np.mean(rhos)), "kendall": float(np.mean(taus)), "groups": groups,
            "M_proxy": M_proxy, "M_ref": M_ref}


def with_overrides(config: GrpoConfig, **kw) -> GrpoConfig:
    return replace(config, **kw)
