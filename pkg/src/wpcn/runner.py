"""Experiment orchestration: distributed training, evaluation and baselines.

Every run draws from separately seeded random streams (channel evolution,
warm-up channel, weight init, per-agent policy sampling), so changing one seed
leaves the others' draws untouched.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (ActionSpaces, Agent, StateNormalizer, exchange_prices, raw_state,
                    sense_external, state_size)
from .baselines import Problem, brute_force_oracle, naive_policy, pgd_solve
from .channel import ChannelModel, circular_geometry
from .config import ExperimentConfig, load_config
from .env import BUDGET_TOL, build_schedule, harvested_energy, step
from .errors import AggregationError, ConfigError, NumericError, StateError
from .nn import DenseNet, TwoHeadActorNet, load_net, save_net

log = logging.getLogger(__name__)

__all__ = [
    "streams",
    "build_agents",
    "calibrate_normalizers",
    "DistributedNetwork",
    "RunResult",
    "MetricsWriter",
    "train",
    "train_seed",
    "evaluate",
    "evaluate_seed",
    "run_baseline",
    "aggregate",
    "decision_time",
    "SKIP_LIMIT",
]

SKIP_LIMIT = 0.01
FLUSH_EVERY = 1000

_STREAM_IDS = {"channel": 1, "test_channel": 2, "warmup": 3, "init": 4, "policy": 5,
               "eval_policy": 6}


def streams(config: ExperimentConfig, seed: int, name: str, agent: int | None = None):
    """Independent generator for one named stream of one run."""
    base = {"channel": config.channel_seed, "test_channel": config.channel_seed,
            "warmup": config.channel_seed, "init": config.init_seed,
            "policy": config.policy_seed, "eval_policy": config.policy_seed}[name]
    root = seed if base is None else base
    key = [int(root), _STREAM_IDS[name]]
    if agent is not None:
        key.append(int(agent))
    return np.random.default_rng(np.random.SeedSequence(key))


def action_spaces(config: ExperimentConfig) -> ActionSpaces:
    return ActionSpaces(config.K_T, config.K_P, config.T, config.eps_tau)


def make_channel(config: ExperimentConfig, rng) -> ChannelModel:
    geom = circular_geometry(config.n_cells, config.hap_user_distance, config.hap_spacing,
                             config.pathloss_exponent)
    return ChannelModel(geom, config.rho, rng)


def make_problem(config: ExperimentConfig, gains) -> Problem:
    return Problem(gains, config.eh(), config.P, config.sigma2, config.beta, config.T,
                   config.eps_tau)


def build_agents(config: ExperimentConfig, seed: int, normalizers=None) -> list[Agent]:
    n = config.n_cells
    spaces = action_spaces(config)
    dim = state_size(n)
    agents = []
    for i in range(n):
        init = streams(config, seed, "init", i)
        actor = TwoHeadActorNet(dim, config.actor_trunk, config.actor_head, config.K_T,
                                config.K_P, init, config.actor_out_scale)
        widths = [dim, *config.critic_hidden, 1]
        critic = DenseNet(widths, ["tanh"] * len(config.critic_hidden) + ["linear"], init)
        agents.append(Agent(i, actor, critic, spaces, streams(config, seed, "policy", i),
                            None if normalizers is None else normalizers[i],
                            config.alpha_C, config.alpha_A, config.gamma))
    return agents


@dataclass
class _SlotMemory:
    """What each H-AP remembers about the previous slot."""

    tau: np.ndarray
    p: np.ndarray
    rates: np.ndarray
    own_gain: np.ndarray
    schedule: object


def local_raw_states(config: ExperimentConfig, prev: _SlotMemory, gains) -> list[np.ndarray]:
    """Raw state of every agent, each built from its own memory and sensing."""
    out = []
    eta = config.eta
    for i in range(config.n_cells):
        ext = sense_external(i, prev.schedule, gains, prev.p, config.P, eta, config.beta)
        out.append(raw_state(prev.tau[i], prev.p[i], prev.own_gain[i], gains.h[i, i],
                             prev.rates[i], ext))
    return out


def calibrate_normalizers(config: ExperimentConfig, seed: int) -> list[StateNormalizer]:
    """Per-agent feature statistics from warm-up slots under the naive policy."""
    ch = make_channel(config, streams(config, seed, "warmup"))
    n = config.n_cells
    samples = [[] for _ in range(n)]
    prev = None
    for _ in range(config.warmup_slots):
        gains = ch.gains
        if prev is not None:
            for i, raw in enumerate(local_raw_states(config, prev, gains)):
                samples[i].append(raw)
        rep = naive_policy(make_problem(config, gains))
        out = step(gains, rep.tau, rep.p, config.eh(), config.P, config.sigma2, config.beta,
                   config.T, config.eps_tau)
        prev = _SlotMemory(rep.tau, rep.p, out.rates, np.diag(gains.h).copy(), out.schedule)
        ch.advance()
    if not samples[0]:
        # a single warm-up slot yields no transitions; fall back to identity scaling
        return [StateNormalizer(n, config.T) for _ in range(n)]
    return [StateNormalizer.calibrate(samples[i], n, config.T, config.P, config.sigma2)
            for i in range(n)]


class DistributedNetwork:
    """Runs the per-slot protocol for a set of agents on one channel.

    Phases within a slot: (1) every agent picks its WET duration, (2) the
    harvested energies are measured, (3) every agent picks its power, (4) the
    outcome is evaluated and price messages exchanged, (5) each agent updates
    once the next state is sensed.
    """

    def __init__(self, config: ExperimentConfig, agents: list[Agent], channel: ChannelModel,
                 learn: bool = True, executor: ThreadPoolExecutor | None = None):
        self.config = config
        self.agents = agents
        self.channel = channel
        self.learn = learn
        self.executor = executor
        self.spaces = action_spaces(config)
        self.model = config.eh()
        self.slot = 0
        self.prev: _SlotMemory | None = None
        self.pending = None  # (states, k_tau, k_p, rewards) awaiting update
        self.skipped = 0
        self.updates = 0
        self.max_budget_excess = -math.inf
        self.phase_log: list | None = None

    def _map(self, fn, items):
        if self.executor is None:
            return [fn(x) for x in items]
        return list(self.executor.map(fn, items))

    def states(self, gains) -> list[np.ndarray]:
        n = self.config.n_cells
        if self.prev is None:
            return [np.zeros(state_size(n)) for _ in range(n)]
        raws = local_raw_states(self.config, self.prev, gains)
        return [a.normalizer(r) if a.normalizer is not None else r
                for a, r in zip(self.agents, raws)]

    def _apply_updates(self, states_next) -> None:
        states, k_tau, k_p, rewards = self.pending
        self.pending = None
        for a in self.agents:
            i = a.index
            try:
                a.update(states[i], k_tau[i], k_p[i], states_next[i], rewards[i])
                self.updates += 1
            except NumericError as exc:
                self.skipped += 1
                log.warning("slot %d: update skipped: %s", self.slot, exc)

    def decide_times(self, states) -> list[int]:
        if self.phase_log is not None:
            self.phase_log.append(("time", self.slot))
        return self._map(lambda a: a.choose_time(states[a.index]), self.agents)

    def decide_powers(self) -> list[int]:
        if self.phase_log is not None:
            self.phase_log.append(("power", self.slot))
        return self._map(lambda a: a.choose_power(), self.agents)

    def run_slot(self):
        cfg = self.config
        gains = self.channel.gains
        states = self.states(gains)
        if self.learn and self.pending is not None:
            self._apply_updates(states)
        k_tau = self.decide_times(states)
        tau = np.array([self.spaces.tau_of(k) for k in k_tau])
        sched = build_schedule(tau, cfg.T, cfg.eps_tau)
        energies = harvested_energy(sched, gains, self.model, cfg.P)
        if self.phase_log is not None:
            self.phase_log.append(("energy", self.slot))
        k_p = self.decide_powers()
        p = np.array([self.spaces.power_of(k, energies[i], tau[i]) for i, k in enumerate(k_p)])
        out = step(gains, tau, p, self.model, cfg.P, cfg.sigma2, cfg.beta, cfg.T,
                   cfg.eps_tau, energies=energies)
        self.max_budget_excess = max(self.max_budget_excess,
                                     float(np.max((cfg.T - tau) * p - energies)))
        rewards = exchange_prices(out, self.slot)
        if self.learn:
            self.pending = (states, k_tau, k_p, rewards)
        self.prev = _SlotMemory(tau, p, out.rates, np.diag(gains.h).copy(), sched)
        self.channel.advance()
        self.slot += 1
        return out, rewards, k_tau, k_p

    def finish(self) -> None:
        """Apply the update for the last slot using the next sensed state."""
        if self.learn and self.pending is not None:
            self._apply_updates(self.states(self.channel.gains))


class MetricsWriter:
    """Per-slot CSV rows, flushed every ``FLUSH_EVERY`` rows."""

    def __init__(self, path, n_cells: int, policy: str, seed: int, window: int = 1000):
        self.n_cells = n_cells
        self.policy = policy
        self.seed = seed
        self.window = deque(maxlen=window)
        self.rows = 0
        self.sum_rates: list[float] = []
        self._f = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._f = open(path, "w", newline="")
            self._w = csv.writer(self._f)
            self._w.writerow(self.header(n_cells))

    @staticmethod
    def header(n: int) -> list[str]:
        return (["slot", "policy", "seed", "sum_rate", "ma_sum_rate"]
                + [f"reward_{i}" for i in range(n)] + [f"rate_{i}" for i in range(n)])

    def write(self, slot: int, outcome, rewards) -> float:
        s = outcome.sum_rate
        self.window.append(s)
        ma = math.fsum(self.window) / len(self.window)
        self.sum_rates.append(s)
        if self._f is not None:
            T = outcome.schedule.T
            self._w.writerow([slot, self.policy, self.seed, repr(s), repr(ma)]
                             + [repr(float(r)) for r in rewards]
                             + [repr(float(r) / T) for r in outcome.rates])
            self.rows += 1
            if self.rows % FLUSH_EVERY == 0:
                self._f.flush()
        return ma

    def close(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None


@dataclass
class RunResult:
    seed: int
    policy: str
    sum_rates: np.ndarray
    skipped: int = 0
    updates: int = 0
    max_budget_excess: float = -math.inf
    agents: list = field(default_factory=list, repr=False)
    metrics_path: Path | None = None
    wall_time: float = 0.0

    @property
    def mean_sum_rate(self) -> float:
        return float(np.mean(self.sum_rates)) if self.sum_rates.size else float("nan")

    @property
    def failed(self) -> bool:
        return self.updates + self.skipped > 0 and self.skipped > SKIP_LIMIT * (
            self.updates + self.skipped)


def _seed_dir(out_dir, seed: int) -> Path | None:
    return None if out_dir is None else Path(out_dir) / f"seed_{seed:03d}"


def save_checkpoints(agents: list[Agent], directory, slot: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for a in agents:
        stem = directory / f"agent{a.index:02d}_slot{slot:07d}"
        save_net(a.actor, stem.with_suffix(".actor"))
        if a.critic is not None:
            save_net(a.critic, stem.with_suffix(".critic"))
        (directory / f"agent{a.index:02d}.norm.json").write_text(
            json.dumps(a.normalizer.to_dict()))


def train_seed(config: ExperimentConfig, seed: int, out_dir=None) -> RunResult:
    """Distributed training for one seed (one set of randomly initialized nets)."""
    t0 = time.perf_counter()
    sdir = _seed_dir(out_dir, seed)
    normalizers = calibrate_normalizers(config, seed)
    agents = build_agents(config, seed, normalizers)
    net = DistributedNetwork(config, agents, make_channel(config, streams(config, seed, "channel")))
    writer = MetricsWriter(None if sdir is None else sdir / "metrics.csv", config.n_cells,
                           "madrl", seed, config.ma_window)
    if sdir is not None:
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / "config.txt").write_text(config.replace(seeds=(seed,)).to_text())
    try:
        for t in range(config.train_slots):
            out, rewards, _, _ = net.run_slot()
            writer.write(t, out, rewards)
            if (sdir is not None and config.checkpoint_every
                    and (t + 1) % config.checkpoint_every == 0 and t + 1 < config.train_slots):
                save_checkpoints(agents, sdir / "checkpoints", t + 1)
        net.finish()
    finally:
        writer.close()
    if sdir is not None:
        save_checkpoints(agents, sdir / "checkpoints", config.train_slots)
    res = RunResult(seed, "madrl", np.array(writer.sum_rates), net.skipped, net.updates,
                    net.max_budget_excess, agents, None if sdir is None else sdir / "metrics.csv",
                    time.perf_counter() - t0)
    if res.failed:
        log.error("seed %d: %d of %d updates skipped; run marked failed", seed, net.skipped,
                  net.updates + net.skipped)
    return res


def train(config: ExperimentConfig, out_dir=None) -> list[RunResult]:
    return [train_seed(config, s, out_dir) for s in config.seeds]


_CKPT = re.compile(r"agent(\d+)_slot(\d+)\.actor$")


def load_actors(config: ExperimentConfig, directory):
    """Latest actor checkpoint and normalizer of every agent in ``directory``."""
    directory = Path(directory)
    latest = {}
    for f in directory.glob("agent*_slot*.actor"):
        m = _CKPT.search(f.name)
        i, t = int(m.group(1)), int(m.group(2))
        if i not in latest or t > latest[i][0]:
            latest[i] = (t, f)
    if sorted(latest) != list(range(config.n_cells)):
        raise ConfigError(f"checkpoints in {directory} do not cover {config.n_cells} agents")
    actors, norms = [], []
    for i in range(config.n_cells):
        actor = load_net(latest[i][1])
        if not isinstance(actor, TwoHeadActorNet):
            raise ConfigError(f"{latest[i][1]} is not an actor checkpoint")
        check_topology(config, actor)
        actors.append(actor)
        norms.append(StateNormalizer.from_dict(
            json.loads((directory / f"agent{i:02d}.norm.json").read_text())))
    return actors, norms


def check_topology(config: ExperimentConfig, actor: TwoHeadActorNet) -> None:
    expect_trunk = [state_size(config.n_cells), *config.actor_trunk]
    expect_head = [config.actor_trunk[-1], *config.actor_head]
    if (actor.trunk.widths != expect_trunk
            or actor.head_time.widths != expect_head + [config.K_T]
            or actor.head_power.widths != expect_head + [config.K_P]):
        raise ConfigError("actor topology does not match the configuration")


def evaluate_seed(config: ExperimentConfig, seed: int, actors, normalizers,
                  out_dir=None, greedy: bool | None = None) -> RunResult:
    """Frozen-actor execution on the test channel stream (no critic)."""
    t0 = time.perf_counter()
    for a in actors:
        check_topology(config, a)
    greedy = config.greedy_eval if greedy is None else greedy
    spaces = action_spaces(config)
    agents = [Agent(i, actors[i], None, spaces, streams(config, seed, "eval_policy", i),
                    normalizers[i], greedy=greedy) for i in range(config.n_cells)]
    net = DistributedNetwork(config, agents, make_channel(config, streams(config, seed, "test_channel")),
                             learn=False)
    sdir = _seed_dir(out_dir, seed)
    writer = MetricsWriter(None if sdir is None else sdir / "eval.csv", config.n_cells,
                           "madrl", seed, config.ma_window)
    try:
        for t in range(config.test_slots):
            out, rewards, _, _ = net.run_slot()
            writer.write(t, out, rewards)
    finally:
        writer.close()
    return RunResult(seed, "madrl", np.array(writer.sum_rates), 0, 0, net.max_budget_excess,
                     agents, None if sdir is None else sdir / "eval.csv",
                     time.perf_counter() - t0)


def evaluate(config: ExperimentConfig, checkpoint_root, out_dir=None) -> dict:
    """Evaluate the final checkpoints of every seed under ``checkpoint_root``."""
    per_seed = {}
    for s in config.seeds:
        actors, norms = load_actors(config, Path(checkpoint_root) / f"seed_{s:03d}" / "checkpoints")
        per_seed[s] = evaluate_seed(config, s, actors, norms, out_dir).mean_sum_rate
    vals = np.array(list(per_seed.values()))
    return {"mean_sum_rate": float(vals.mean()),
            "std_sum_rate": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "per_seed": per_seed}


def run_baseline(config: ExperimentConfig, policy: str, seed: int, slots: int | None = None,
                 stream: str = "test_channel", out_dir=None) -> RunResult:
    """Centralized per-slot solve on the given channel stream."""
    if policy not in ("naive", "pgd", "oracle"):
        raise ConfigError(f"unknown baseline {policy!r}")
    t0 = time.perf_counter()
    slots = config.test_slots if slots is None else slots
    ch = make_channel(config, streams(config, seed, stream))
    sdir = _seed_dir(out_dir, seed)
    writer = MetricsWriter(None if sdir is None else sdir / f"{policy}.csv", config.n_cells,
                           policy, seed, config.ma_window)
    excess = -math.inf
    try:
        for t in range(slots):
            prob = make_problem(config, ch.gains)
            if policy == "naive":
                rep = naive_policy(prob)
            elif policy == "pgd":
                rep = pgd_solve(prob, config.pgd_precision)
            else:
                rep = brute_force_oracle(prob, config.oracle_K)
            out = prob.evaluate(rep.tau, rep.p)
            excess = max(excess, float(np.max((config.T - out.schedule.tau) * out.p
                                              - out.energies)))
            writer.write(t, out, out.rewards)
            ch.advance()
    finally:
        writer.close()
    return RunResult(seed, policy, np.array(writer.sum_rates), 0, 0, excess, [],
                     None if sdir is None else sdir / f"{policy}.csv",
                     time.perf_counter() - t0)


def decision_time(config: ExperimentConfig, seed: int = 0, slots: int = 200,
                  threaded: bool = True) -> dict:
    """Per-slot wall time of the two decision phases with one thread per agent.

    Returns mean wall seconds per slot plus the summed per-agent CPU seconds,
    which is what the wall time would be if the agents ran back to back.
    """
    agents = build_agents(config, seed, calibrate_normalizers(config.replace(warmup_slots=2),
                                                              seed))
    n = config.n_cells
    ex = ThreadPoolExecutor(max_workers=n) if threaded else None
    net = DistributedNetwork(config, agents, make_channel(config, streams(config, seed, "channel")),
                             learn=False, executor=ex)
    cpu = [0.0] * n

    def timed(fn):
        def run(a):
            t = time.thread_time()
            out = fn(a)
            cpu[a.index] += time.thread_time() - t
            return out
        return run

    wall = 0.0
    try:
        for _ in range(slots):
            states = net.states(net.channel.gains)
            t0 = time.perf_counter()
            net._map(timed(lambda a: a.choose_time(states[a.index])), agents)
            net._map(timed(lambda a: a.choose_power()), agents)
            wall += time.perf_counter() - t0
            net.run_slot()
    finally:
        if ex is not None:
            ex.shutdown()
    return {"wall": wall / slots, "cpu_per_agent": sum(cpu) / (slots * n),
            "cpu_total": sum(cpu) / slots}


def _read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise AggregationError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    return header, body


def _config_signature(path) -> dict | None:
    cfg = Path(path).parent / "config.txt"
    if not cfg.exists():
        return None
    text = {}
    for line in cfg.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            text[k.strip()] = v.strip()
    for k in ("seeds", "channel_seed", "init_seed", "policy_seed"):
        text.pop(k, None)
    return text


def aggregate(paths, out_path=None) -> dict:
    """Per-slot mean and sample standard deviation of ``sum_rate`` and
    ``ma_sum_rate`` across metrics files (one file per seed)."""
    paths = [Path(p) for p in paths]
    if not paths:
        raise AggregationError("no metrics files given")
    headers, bodies, sigs, policies = [], [], [], set()
    for p in paths:
        h, body = _read_metrics(p)
        headers.append(h)
        bodies.append(body)
        sigs.append(_config_signature(p))
        policies.update(r[1] for r in body)
    if any(h != headers[0] for h in headers):
        raise AggregationError("metrics files have different columns")
    if len(policies) > 1:
        raise AggregationError(f"metrics files mix policies {sorted(policies)}")
    known = [s for s in sigs if s is not None]
    if any(s != known[0] for s in known):
        raise AggregationError("metrics files come from different configurations")
    lengths = {len(b) for b in bodies}
    if len(lengths) != 1:
        raise AggregationError(f"metrics files have different lengths {sorted(lengths)}")
    col_s = headers[0].index("sum_rate")
    col_m = headers[0].index("ma_sum_rate")
    s = np.array([[float(r[col_s]) for r in b] for b in bodies])
    m = np.array([[float(r[col_m]) for r in b] for b in bodies])
    k = s.shape[0]
    result = {
        "slot": np.array([int(r[0]) for r in bodies[0]]),
        "mean_sum_rate": s.mean(axis=0),
        "sd_sum_rate": s.std(axis=0, ddof=1) if k > 1 else np.zeros(s.shape[1]),
        "mean_ma_sum_rate": m.mean(axis=0),
        "sd_ma_sum_rate": m.std(axis=0, ddof=1) if k > 1 else np.zeros(m.shape[1]),
        "n_files": k,
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["slot", "mean_sum_rate", "sd_sum_rate", "mean_ma_sum_rate",
                        "sd_ma_sum_rate", "n_files"])
            for t in range(s.shape[1]):
                w.writerow([int(result["slot"][t]), repr(float(result["mean_sum_rate"][t])),
                            repr(float(result["sd_sum_rate"][t])),
                            repr(float(result["mean_ma_sum_rate"][t])),
                            repr(float(result["sd_ma_sum_rate"][t])), k])
    return result
