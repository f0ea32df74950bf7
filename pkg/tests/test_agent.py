import math

import numpy as np
import pytest
from scipy import stats

import bandit
import gradcheck
from wpcn.agent import (ActionSpaces, Agent, PriceMessage, StateNormalizer, agent_reward,
                        exchange_prices, price_messages, raw_state, realize_action,
                        sense_external, state_size, td_error)
from wpcn.channel import ChannelModel, LinkGains, circular_geometry
from wpcn.config import ExperimentConfig
from wpcn.env import EhModel, build_schedule, price_rewards, step
from wpcn.errors import InvalidArgumentError, NumericError, ProtocolError
from wpcn.nn import DenseNet, TwoHeadActorNet
from wpcn.runner import DistributedNetwork, build_agents, calibrate_normalizers, make_channel, streams

T = 0.02
SP = ActionSpaces(20, 20, T)


class TestRealize:
    def test_zero(self):
        assert realize_action(0, 0, 1e-6, SP) == (0.0, 0.0)

    def test_grid_end(self):
        tau, _ = realize_action(19, 0, 0.0, SP)
        assert tau == pytest.approx(0.0198, abs=1e-15)

    def test_budget_saturating(self):
        sp = ActionSpaces(3, 20, T)
        tau, p = realize_action(1, 19, 5e-6, sp)
        assert tau == pytest.approx(0.0099, rel=1e-14)
        assert (T - tau) * p == pytest.approx(5e-6, rel=1e-14)
        p = sp.power_of(19, 5e-6, 0.01)
        assert p == pytest.approx(5e-4, rel=1e-14)
        assert (T - 0.01) * p <= 5e-6 * (1 + 1e-15)

    def test_grid_spans(self):
        g = SP.tau_grid()
        assert g[0] == 0 and g[-1] == pytest.approx(T - T / 100)
        assert [SP.tau_of(k) for k in range(20)] == pytest.approx(list(g), abs=1e-18)

    @pytest.mark.parametrize("args", [(20, 0), (0, 20), (-1, 0)])
    def test_out_of_range(self, args):
        with pytest.raises(InvalidArgumentError):
            realize_action(*args, 1e-6, SP)

    def test_levels(self):
        with pytest.raises(InvalidArgumentError):
            ActionSpaces(1, 20)

    def test_budget_property(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            E = float(rng.uniform(0, 1e-4))
            tau, p = realize_action(int(rng.integers(20)), int(rng.integers(20)), E, SP)
            assert (T - tau) * p <= E + 1e-12


class TestSensing:
    def gains(self):
        ch = ChannelModel(circular_geometry(2), 0.6425, np.random.default_rng(3))
        ch.advance()
        return ch.gains

    def test_co_wet(self):
        g = self.gains()
        sched = build_schedule([0.01, 0.01], T)
        ext = sense_external(0, sched, g, [1e-3, 2e-3], 1.0, 0.5, 1e-5)
        assert ext.shape == (1, 3)
        assert ext[0, 0] == pytest.approx(0.5 * 1.0 * 0.01 * g.h[0, 1], rel=1e-14)
        # both cells in WIT for the last 10 ms: user 2 interferes, H-AP 2 never transmits WET
        assert ext[0, 1] == pytest.approx(0.01 * g.h[1, 0] * 2e-3, rel=1e-14)
        assert ext[0, 2] == pytest.approx(1e-5 * 0.01 * g.g[1, 0], rel=1e-14)

    def test_silent_neighbour(self):
        g = self.gains()
        for tau in ([0.0, 0.0], [0.003, 0.015], [0.015, 0.003]):
            ext = sense_external(0, build_schedule(tau, T), g, [1e-3, 0.0], 1.0, 0.5, 1e-5)
            assert ext[0, 1] == 0.0

    def test_layout(self):
        ch = ChannelModel(circular_geometry(4), 0.6425, np.random.default_rng(0))
        sched = build_schedule([0.002, 0.004, 0.008, 0.001], T)
        ext = sense_external(2, sched, ch.gains, [1e-3] * 4, 1.0, 0.5, 1e-5)
        s = raw_state(0.008, 1e-3, 1e-3, 2e-3, 0.05, ext)
        assert s.size == state_size(4) == 14
        assert s[:5].tolist() == [0.008, 1e-3, 1e-3, 2e-3, 0.05]
        one = sense_external(2, sched, ch.gains, [1e-3] * 4, 1.0, 0.5, 1e-5)
        assert np.array_equal(s[5:], one.reshape(-1))
        # block for j=3 (last) uses h[3, 2] for WIT interference
        dur = sched.durations
        expect = np.sum(dur * ch.gains.h[3, 2] * 1e-3 * sched.b[:, 3])
        assert s[-2] == pytest.approx(expect, rel=1e-14)


class TestNormalizer:
    def samples(self, n=3, count=300, seed=0):
        rng = np.random.default_rng(seed)
        size = state_size(n)
        out = np.abs(rng.lognormal(-8, 2, (count, size)))
        out[:, 0] = rng.uniform(0, T, count)
        out[:, 4] = rng.uniform(0, 0.2, count)
        return out

    def test_calibrated_features_are_standardized(self):
        smp = self.samples()
        norm = StateNormalizer.calibrate(smp, 3, T, 1.0, 1e-8)
        z = np.array([norm(s) for s in smp])
        idx = norm.log_idx
        assert np.allclose(z[:, idx].mean(axis=0), 0, atol=0.05)
        assert np.all(np.abs(z) <= 5)
        assert np.allclose(z[:, 0], smp[:, 0] / T)
        h_max = smp[:, 3].max()
        assert norm.rate_scale == pytest.approx(T * math.log1p(h_max / 1e-8))

    def test_zero_inputs_are_finite(self):
        norm = StateNormalizer.calibrate(self.samples(), 3, T, 1.0, 1e-8)
        assert np.all(np.isfinite(norm(np.zeros(state_size(3)))))

    def test_roundtrip(self):
        norm = StateNormalizer.calibrate(self.samples(), 3, T, 1.0, 1e-8)
        back = StateNormalizer.from_dict(norm.to_dict())
        s = self.samples(seed=5)[0]
        assert np.array_equal(norm(s), back(s))


def small_agent(seed=0, k=20, alpha_C=1e-3, alpha_A=1e-3, gamma=0.5, zero=False):
    rng = None if zero else np.random.default_rng(seed)
    actor = TwoHeadActorNet(5, [8], [8], k, k, rng)
    critic = DenseNet([5, 8, 1], ["tanh", "linear"], rng)
    return Agent(0, actor, critic, ActionSpaces(k, k, T), np.random.default_rng(seed + 1000),
                 alpha_C=alpha_C, alpha_A=alpha_A, gamma=gamma)


class TestSampling:
    def test_degenerate(self):
        a = small_agent()
        a._probs = (np.eye(20)[3], np.eye(20)[3])
        assert all(a._draw(a._probs[0]) == 3 for _ in range(200))

    def test_uniform_frequencies(self):
        a = small_agent()
        u = np.full(20, 0.05)
        draws = np.array([a._draw(u) for _ in range(100_000)])
        freq = np.bincount(draws, minlength=20) / draws.size
        assert np.all(np.abs(freq - 0.05) <= 0.01)
        assert stats.chisquare(np.bincount(draws, minlength=20)).pvalue > 1e-3

    def test_same_seed_same_sample(self):
        s = np.linspace(-1, 1, 5)
        assert small_agent(4).sample_action(s) == small_agent(4).sample_action(s)

    def test_power_before_time(self):
        with pytest.raises(ProtocolError):
            small_agent().choose_power()

    def test_greedy(self):
        a = small_agent()
        a.greedy = True
        pt, pp = a.actor.predict(np.ones(5))
        assert a.sample_action(np.ones(5)) == (int(np.argmax(pt)), int(np.argmax(pp)))


class TestTd:
    def test_zero_critic(self):
        c = DenseNet([3, 4, 1], ["tanh", "linear"])
        assert td_error(c, np.ones(3), np.zeros(3), 0.7, 0.5) == 0.7

    def test_equal_values(self):
        c = DenseNet([3, 4, 1], ["tanh", "linear"], np.random.default_rng(0))
        assert td_error(c, np.ones(3), np.ones(3), 0.0, 1.0) == 0.0

    def test_arithmetic(self):
        c = DenseNet([1, 1], ["linear"])
        c.weights[0][0, 0] = 1.0
        assert td_error(c, [1.0], [2.0], 0.5, 0.5) == pytest.approx(0.5)


class TestUpdate:
    def test_zero_delta_keeps_params(self):
        a = small_agent(zero=True)  # V == 0, so delta == r == 0
        before = [p.copy() for p in a.actor.params() + a.critic.params()]
        a.sample_action(np.ones(5))
        assert a.update(np.ones(5), 1, 2, np.zeros(5), 0.0) == 0.0
        after = a.actor.params() + a.critic.params()
        assert all(np.array_equal(p, q) for p, q in zip(before, after))

    def test_alpha_actor_zero(self):
        a = small_agent(alpha_A=0.0)
        actor0 = [p.copy() for p in a.actor.params()]
        critic0 = [p.copy() for p in a.critic.params()]
        a.sample_action(np.ones(5))
        a.update(np.ones(5), 1, 2, np.zeros(5), 1.0)
        assert all(np.array_equal(p, q) for p, q in zip(actor0, a.actor.params()))
        assert not all(np.array_equal(p, q) for p, q in zip(critic0, a.critic.params()))

    def test_scalar_critic(self):
        critic = DenseNet([1, 1], ["linear"])
        critic.weights[0][0, 0] = 0.3
        actor = TwoHeadActorNet(1, [2], [], 2, 2, np.random.default_rng(0))
        a = Agent(0, actor, critic, ActionSpaces(2, 2), np.random.default_rng(0),
                  alpha_C=0.1, alpha_A=0.0, gamma=0.0)
        a.sample_action([1.0])
        a.update([1.0], 0, 0, [0.0], 1.0)
        assert critic.weights[0][0, 0] == pytest.approx(0.3 + 0.1 * (1 - 0.3), rel=1e-14)

    def test_matches_finite_difference_prediction(self):
        rng = np.random.default_rng(12)
        a = small_agent(seed=12, k=4, alpha_C=1e-2, alpha_A=1e-2)
        s, s2 = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5)
        r = 0.8
        kt, kp = a.sample_action(s)
        delta = r + a.gamma * a.critic.predict(s2)[0] - a.critic.predict(s)[0]
        gv = gradcheck.numeric_grad(lambda: float(a.critic.predict(s)[0]), a.critic.params())

        def logpi():
            pt, pp = a.actor.predict(s)
            return float(np.log(pt[kt]) + np.log(pp[kp]))

        ga = gradcheck.numeric_grad(logpi, a.actor.params())
        expect_c = [p + 1e-2 * delta * g for p, g in zip(a.critic.params(), gv)]
        expect_a = [p + 1e-2 * delta * g for p, g in zip(a.actor.params(), ga)]
        got = a.update(s, kt, kp, s2, r)
        assert got == pytest.approx(delta, rel=1e-14)
        for p, e in zip(a.critic.params() + a.actor.params(), expect_c + expect_a):
            np.testing.assert_allclose(p, e, rtol=1e-6, atol=1e-12)

    def test_non_finite_reward(self):
        a = small_agent()
        before = [p.copy() for p in a.critic.params()]
        a.sample_action(np.ones(5))
        with pytest.raises(NumericError):
            a.update(np.ones(5), 0, 0, np.ones(5), float("nan"))
        assert all(np.array_equal(p, q) for p, q in zip(before, a.critic.params()))

    def test_evaluation_agent_cannot_update(self):
        a = small_agent()
        a.critic = None
        a.sample_action(np.ones(5))
        with pytest.raises(ProtocolError):
            a.update(np.ones(5), 0, 0, np.ones(5), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_bandit_prefers_better_arm(seed):
    _, p0 = bandit.run(seed)
    assert p0 > 0.9


def test_fixed_positive_delta_pushes_toward_arm():
    # critic frozen at zero and reward fixed: delta is a constant 1 for arm 0
    probs = []
    a = bandit.make_agent(0, alpha_C=0.0, alpha_A=0.05)
    for w in a.critic.weights:
        w[:] = 0
    for _ in range(300):
        a.sample_action(bandit.STATE)
        a.update(bandit.STATE, 0, 0, bandit.STATE, 1.0)
        probs.append(a.actor.predict(bandit.STATE)[0][0])
    assert np.all(np.diff(probs) > 0) and probs[-1] > 0.9


class TestPrices:
    def outcome(self, n=3, seed=0, cross=True):
        ch = ChannelModel(circular_geometry(n), 0.6425, np.random.default_rng(seed))
        g = ch.gains
        if not cross:
            g = LinkGains(np.diag(np.diag(g.h)), np.zeros_like(g.g))
        tau = np.linspace(0.002, 0.012, n)
        E = EhModel()
        from wpcn.env import harvested_energy
        e = harvested_energy(build_schedule(tau, T), g, E, 1.0)
        return step(g, tau, 0.7 * e / (T - tau), E, 1.0, 1e-8, 1e-5, T)

    def test_single_cell(self):
        out = self.outcome(1)
        assert exchange_prices(out, 0)[0] == out.rates[0]

    def test_no_cross_gains(self):
        out = self.outcome(3, cross=False)
        assert np.array_equal(exchange_prices(out, 0), out.rates)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_bit_for_bit_central(self, n):
        out = self.outcome(n, seed=n)
        assert np.array_equal(exchange_prices(out, 7), price_rewards(out.rates, out.rates_excl))
        assert np.array_equal(exchange_prices(out, 7), out.rewards)

    def test_message_values(self):
        out = self.outcome(3)
        for j in range(3):
            for m in price_messages(j, out, 4):
                assert m.sender == j and m.slot == 4
                assert m.value >= out.rates[j]

    def test_missing_message(self):
        out = self.outcome(3)
        inbox = [m for m in price_messages(1, out, 0) if m.receiver == 0]
        with pytest.raises(ProtocolError):
            agent_reward(0, float(out.rates[0]), inbox, 3, 0)

    def test_misaddressed(self):
        with pytest.raises(ProtocolError):
            agent_reward(0, 1.0, [PriceMessage(1, 2, 1.0, 1.0, 0)], 2, 0)


def test_locality():
    cfg = ExperimentConfig(n_cells=3, warmup_slots=30, critic_hidden=(8,), actor_trunk=(8,),
                           actor_head=(8,))
    norms = calibrate_normalizers(cfg, 0)
    agents = build_agents(cfg, 0, norms)
    net = DistributedNetwork(cfg, agents, make_channel(cfg, streams(cfg, 0, "channel")))
    for _ in range(5):
        net.run_slot()
    gains = net.channel.gains
    before = net.states(gains)
    # perturb everything agent 0 does not sense: other agents' nets and private memory
    for a in agents[1:]:
        for p in a.actor.params() + a.critic.params():
            p += 1.0
    net.prev.rates[1:] += 1.0
    net.prev.own_gain[1:] *= 2.0
    after = net.states(gains)
    assert np.array_equal(before[0], after[0])
    assert not np.array_equal(before[1], after[1])


def test_slot_zero_state_is_zero():
    cfg = ExperimentConfig(n_cells=2, warmup_slots=10, critic_hidden=(4,), actor_trunk=(4,),
                           actor_head=(4,))
    agents = build_agents(cfg, 0, calibrate_normalizers(cfg, 0))
    net = DistributedNetwork(cfg, agents, make_channel(cfg, streams(cfg, 0, "channel")))
    for s in net.states(net.channel.gains):
        assert s.shape == (state_size(2),) and np.all(s == 0)
