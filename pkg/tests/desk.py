"""Desk-scale experiment settings shared by the slower tests."""

from wpcn.config import ExperimentConfig

# the nominal learning rates need ~1e5 slots; these reach a stable policy in 2e4
DESK_ALPHA_C = 1e-2
DESK_ALPHA_A = 1e-1


def desk_config(n_cells: int, eh_model: str = "linear", **kw) -> ExperimentConfig:
    base = dict(n_cells=n_cells, eh_model=eh_model, alpha_C=DESK_ALPHA_C,
                alpha_A=DESK_ALPHA_A, train_slots=20_000, test_slots=2_000,
                seeds=tuple(range(10)))
    base.update(kw)
    return ExperimentConfig(**base)


def tiny_config(n_cells: int = 2, **kw) -> ExperimentConfig:
    """Small networks and short runs for plumbing tests."""
    base = dict(n_cells=n_cells, critic_hidden=(8, 8), actor_trunk=(8,), actor_head=(8,),
                warmup_slots=50, train_slots=200, test_slots=100, seeds=(0, 1),
                alpha_C=1e-2, alpha_A=1e-2)
    base.update(kw)
    return ExperimentConfig(**base)
