"""Toy flow-matching layout generator and its group-relative preference training."""
from .core import (
    GRPO_REWARD_CONFIG,
    HISTORY_COLUMNS,
    PERTURBED,
    POLICY,
    CandidateGroup,
    GrpoConfig,
    Perturbation,
    TrainResult,
    advantages,
    ema_update,
    grpo_gradient,
    grpo_loss,
    history_to_csv,
    loss_weights,
    make_group,
    moving_average,
    perturb,
    proxy_validation,
    train,
    training_objective,
    trust_region_mask,
)
from .flow import SAMPLE_STEPS, ToyGenerator, fm_loss, fm_losses, pretrain, sample, sample_many
from .mlp import MLP, SGD, Adam
from .template import FEATURES, SceneTemplate, get_template, toy_template


def pretrained_generator(template_name: str = "toy-bedroom", seed: int = 0, data_size: int = 2000,
                         steps: int = 20000) -> ToyGenerator:
    """A generator fitted by plain flow matching to jittered template layouts."""
    template = get_template(template_name)
    data = template.dataset(data_size, seed)
    gen = ToyGenerator.create(template, seed)
    gen.fit_normalization(data)
    pretrain(gen, data, steps=steps, seed=seed)
    return gen
