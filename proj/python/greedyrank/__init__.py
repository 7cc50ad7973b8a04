"""Deep linear bottleneck autoencoders.

Thin wrapper over the compiled core. Training entry points take config text in
the same ``key = value`` format as the CLI, plus optional overrides.
"""

from ._core import (
    ConfigError,
    CsvError,
    ParseError,
    build_P,
    config_entries,
    estimate_rank,
    gen_lowrank,
    gen_manifold,
    generator,
    greedy_emergence,
    latent_rank,
    mu,
    order_trial,
    orthogonal_stack,
    predicted_delta,
    predicted_delta_modal,
    read_idx,
    singular_values,
    train,
    two_stage,
)

__all__ = [
    "ConfigError",
    "CsvError",
    "ParseError",
    "build_P",
    "config_entries",
    "estimate_rank",
    "gen_lowrank",
    "gen_manifold",
    "generator",
    "greedy_emergence",
    "latent_rank",
    "load_config_text",
    "mu",
    "order_trial",
    "orthogonal_stack",
    "predicted_delta",
    "predicted_delta_modal",
    "read_idx",
    "singular_values",
    "train",
    "two_stage",
]


def load_config_text(path):
    with open(path, encoding="utf-8") as f:
        return f.read()
