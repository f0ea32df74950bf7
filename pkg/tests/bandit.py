"""One-state, two-arm bandit driven through ``Agent.update``."""

import numpy as np

from wpcn.agent import ActionSpaces, Agent
from wpcn.nn import DenseNet, TwoHeadActorNet

STATE = np.array([1.0, -0.5, 0.25])
MEANS = (1.0, 0.5)  # arm 0 is the better one


def make_agent(seed: int, alpha_C=0.05, alpha_A=0.05) -> Agent:
    rng = np.random.default_rng(seed)
    actor = TwoHeadActorNet(3, [4], [], 2, 2, rng)
    critic = DenseNet([3, 4, 1], ["tanh", "linear"], rng)
    return Agent(0, actor, critic, ActionSpaces(2, 2), np.random.default_rng([seed, 1]),
                 alpha_C=alpha_C, alpha_A=alpha_A, gamma=0.0)


def run(seed: int, max_updates: int = 5000, target: float = 0.9, noise: float = 0.5):
    """Updates until pi(arm 0) exceeds ``target``; returns (updates, final pi(arm 0))."""
    agent = make_agent(seed)
    reward_rng = np.random.default_rng([seed, 2])
    for t in range(max_updates):
        k, k_p = agent.sample_action(STATE)
        r = MEANS[k] + noise * reward_rng.standard_normal()
        agent.update(STATE, k, k_p, STATE, r)
        p0 = float(agent.actor.predict(STATE)[0][0])
        if p0 > target:
            return t + 1, p0
    return max_updates, p0
