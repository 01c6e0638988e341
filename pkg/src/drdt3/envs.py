"""Toy environments, offline dataset generation, and rollout evaluation.

PointReach: 2-D point mass steered toward a fixed goal (dense reward).
StitchChain: 1-D corridor with a single sparse reward at the far end; its
"stitch" dataset splits the route into two trajectory families so that no
single dataset episode solves the task from the true start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dt3 import ContextWindow, ContextBatch, predict_coarse_actions_batch
from .diffusion import sample_action


@dataclass
class EnvSpec:
    env_id: str
    d_s: int
    d_a: int
    a_max: float
    t_max: int
    reward_kind: str                 # dense | sparse
    random_score: float
    expert_score: float
    gamma: float = 1.0               # recorded only; returns are undiscounted

    def validate(self):
        if self.a_max <= 0 or self.t_max < 1:
            raise ValueError("invalid EnvSpec bounds")
        if self.expert_score <= self.random_score:
            raise ValueError("expert_score must exceed random_score")
        return self


@dataclass
class Trajectory:
    states: np.ndarray       # (T, d_s)
    actions: np.ndarray      # (T, d_a)
    rewards: np.ndarray      # (T,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise ValueError("trajectory field lengths disagree")

    @property
    def length(self):
        return len(self.rewards)

    @property
    def rtgs(self):
        return compute_rtg(self.rewards)

    @property
    def ret(self):
        return float(self.rewards.sum())


class TrajectoryStore:
    def __init__(self, env_id, d_s, d_a, trajectories=()):
        self.env_id = env_id
        self.d_s = d_s
        self.d_a = d_a
        self.trajectories = []
        self.state_mean = np.zeros(d_s)
        self.state_std = np.ones(d_s)
        self.max_abs_return = 1.0
        for t in trajectories:
            self.add(t, _recompute=False)
        self._recompute_stats()

    def add(self, traj, _recompute=True):
        if traj.states.shape[1] != self.d_s or traj.actions.shape[1] != self.d_a:
            raise ValueError("trajectory dims do not match store")
        self.trajectories.append(traj)
        if _recompute:
            self._recompute_stats()

    def _recompute_stats(self):
        if not self.trajectories:
            self.state_mean = np.zeros(self.d_s)
            self.state_std = np.ones(self.d_s)
            self.max_abs_return = 1.0
            return
        allstates = np.concatenate([t.states for t in self.trajectories])
        self.state_mean = allstates.mean(axis=0)
        self.state_std = np.maximum(allstates.std(axis=0), 1e-6)
        self.max_abs_return = max(
            1e-8, max(abs(t.ret) for t in self.trajectories)
        )

    @property
    def count(self):
        return len(self.trajectories)

    def max_return(self):
        return max(t.ret for t in self.trajectories)

    def max_length(self):
        return max(t.length for t in self.trajectories)


def compute_rtg(rewards):
    """Undiscounted suffix sums of the reward sequence."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("compute_rtg needs at least one reward")
    return np.cumsum(rewards[::-1])[::-1].copy()


def initial_rtg(store, eta):
    """Scale the best dataset return: multiply if positive, divide if not."""
    g = store.max_return()
    return eta * g if g >= 0 else g / eta


def normalized_score(raw, spec):
    if spec.expert_score <= spec.random_score:
        raise ValueError("degenerate EnvSpec reference scores")
    return 100.0 * (raw - spec.random_score) / (spec.expert_score - spec.random_score)


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------

class PointReach:
    """2-D point mass: state (pos, vel) in R^4, action = acceleration in
    [-1,1]^2, Euler step dt=0.1, reward -|pos - goal|, horizon 50."""

    env_id = "pointreach"
    dt = 0.1
    goal = np.array([1.0, 1.0])

    def __init__(self):
        self.state = None
        self.t = 0

    def reset(self, start=None):
        self.state = np.zeros(4) if start is None else np.array(start, dtype=float)
        self.t = 0
        return self.state.copy()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        pos, vel = self.state[:2], self.state[2:]
        vel = vel + self.dt * a
        pos = pos + self.dt * vel
        self.state = np.concatenate([pos, vel])
        self.t += 1
        reward = -float(np.linalg.norm(pos - self.goal))
        return self.state.copy(), reward, self.t >= 50

    def expert_action(self, state, rng=None, sigma=0.0):
        pos, vel = state[:2], state[2:]
        a = 4.0 * (self.goal - pos) - 3.0 * vel
        if sigma > 0.0:
            a = a + rng.normal(0.0, sigma, size=2)
        return np.clip(a, -1.0, 1.0)


class StitchChain:
    """1-D corridor on [0, 8]: the action shifts the position, reward 1.0 is
    paid once upon first reaching pos >= 8, horizon 20, episodes start at 0."""

    env_id = "stitchchain"

    def __init__(self):
        self.pos = 0.0
        self.t = 0
        self.rewarded = False

    def reset(self, start=None):
        self.pos = 0.0 if start is None else float(start)
        self.t = 0
        self.rewarded = False
        return np.array([self.pos])

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        self.pos = float(np.clip(self.pos + a, 0.0, 8.0))
        self.t += 1
        reward = 0.0
        if self.pos >= 8.0 and not self.rewarded:
            reward = 1.0
            self.rewarded = True
        done = self.rewarded or self.t >= 20
        return np.array([self.pos]), reward, done

    def expert_action(self, state, rng=None, sigma=0.0):
        a = 1.0
        if sigma > 0.0:
            a = a + rng.normal(0.0, sigma)
        return np.array([np.clip(a, -1.0, 1.0)])


_ENVS = {"pointreach": PointReach, "stitchchain": StitchChain}
_SPEC_CACHE = {}


def make_env(env_id):
    try:
        return _ENVS[env_id]()
    except KeyError:
        raise ValueError(f"unknown env {env_id!r}") from None


def _run_policy(env, policy, rng, episodes):
    total = 0.0
    for _ in range(episodes):
        state = env.reset()
        done = False
        while not done:
            state, r, done = env.step(policy(state, rng))
            total += r
    return total / episodes


def make_env_spec(env_id, ref_episodes=100, ref_seed=0):
    """EnvSpec with reference scores measured from in-repo random and expert
    controllers (cached per env)."""
    if env_id in _SPEC_CACHE:
        return _SPEC_CACHE[env_id]
    env = make_env(env_id)
    d_a = 2 if env_id == "pointreach" else 1
    d_s = 4 if env_id == "pointreach" else 1
    rng = np.random.default_rng(ref_seed)
    random_score = _run_policy(
        env, lambda s, r: r.uniform(-1.0, 1.0, size=d_a), rng, ref_episodes
    )
    rng = np.random.default_rng(ref_seed)
    expert_score = _run_policy(
        env, lambda s, r: env.expert_action(s), rng, ref_episodes
    )
    spec = EnvSpec(
        env_id=env_id, d_s=d_s, d_a=d_a, a_max=1.0,
        t_max=50 if env_id == "pointreach" else 20,
        reward_kind="dense" if env_id == "pointreach" else "sparse",
        random_score=random_score, expert_score=expert_score,
    ).validate()
    _SPEC_CACHE[env_id] = spec
    return spec


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _record_episode(env, policy, rng, start=None):
    states, actions, rewards = [], [], []
    state = env.reset(start=start)
    done = False
    while not done:
        a = policy(state, rng)
        states.append(state)
        actions.append(np.atleast_1d(a))
        state, r, done = env.step(a)
        rewards.append(r)
    return Trajectory(np.array(states), np.array(actions), np.array(rewards))


def _calibrate_medium_sigma(env_id, rng, target, episodes=40):
    """Pick the expert-noise sigma whose mean return is closest to target."""
    best_sigma, best_gap = 0.0, np.inf
    for sigma in np.linspace(0.0, 30.0, 31):
        env = make_env(env_id)
        r = _run_policy(
            env, lambda s, g: env.expert_action(s, g, sigma),
            np.random.default_rng(rng.integers(2**32)), episodes,
        )
        gap = abs(r - target)
        if gap < best_gap:
            best_sigma, best_gap = sigma, gap
    return best_sigma


def generate_dataset(env_id, tier, n_traj, seed):
    """Offline dataset tiers: medium (noisy expert at ~1/3 score),
    medium-replay (mixture from poor to medium), stitch (StitchChain only:
    two families that only solve the task when composed)."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rng = np.random.default_rng(seed)
    spec = make_env_spec(env_id)
    store = TrajectoryStore(env_id, spec.d_s, spec.d_a)

    if tier == "stitch":
        if env_id != "stitchchain":
            raise ValueError("stitch tier is only defined for stitchchain")
        for j in range(n_traj):
            env = make_env(env_id)
            if j % 2 == 0:
                # Family A: 0 -> 4, then wander below 5. Return 0.
                def policy(s, g):
                    pos = s[0]
                    if pos < 4.0 and g.uniform() < 0.97:
                        return np.array([1.0])
                    return np.array([np.clip(g.normal(0.0, 0.25), -0.45, 0.45)
                                     if pos < 4.5 else
                                     np.clip(g.normal(-0.2, 0.2), -0.45, 0.1)])
                traj = _record_episode(env, policy, rng)
                assert traj.ret == 0.0, "family A must never reach the goal"
            else:
                # Family B: teleported start at 4, straight to 8. Return 1.
                traj = _record_episode(
                    env, lambda s, g: np.array([1.0]), rng, start=4.0
                )
                assert traj.ret == 1.0
            store.add(traj, _recompute=False)
        store._recompute_stats()
        assert not any(
            t.states[0, 0] == 0.0 and t.ret > 0.0 for t in store.trajectories
        ), "stitch dataset must not contain a full solution"
        return store

    target_medium = spec.random_score + (spec.expert_score - spec.random_score) / 3.0
    if tier == "medium":
        sigma = _calibrate_medium_sigma(env_id, rng, target_medium)
        sigmas = [sigma] * n_traj
    elif tier == "medium-replay":
        sigma = _calibrate_medium_sigma(env_id, rng, target_medium)
        sigmas = list(np.linspace(max(2 * sigma, 1.0), sigma, n_traj))
    else:
        raise ValueError(f"unknown tier {tier!r} for env {env_id!r}")

    for sigma_j in sigmas:
        env = make_env(env_id)
        traj = _record_episode(
            env, lambda s, g: env.expert_action(s, g, sigma_j), rng
        )
        store.add(traj, _recompute=False)
    store._recompute_stats()
    return store


# ---------------------------------------------------------------------------
# Rollout (inference loop)
# ---------------------------------------------------------------------------

def rollout(bundle, env, eval_cfg, rng, mode="drdt3"):
    """One evaluated episode following the inference procedure: sliding
    K-step context, RTG decremented by observed rewards, coarse prediction
    optionally refined by the diffusion chain."""
    from .diffusion import vp_schedule

    spec = make_env_spec(env.env_id)
    cfg = bundle.config
    k = cfg.context_len
    sched = vp_schedule(cfg.n_diffusion_steps, cfg.beta_min, cfg.beta_max)

    g0 = bundle.initial_return
    g0 = eval_cfg.rtg_scale * g0 if g0 >= 0 else g0 / eval_cfg.rtg_scale

    state = env.reset()
    g = g0
    hist_states, hist_actions, hist_rtgs, hist_steps = [], [], [], []
    rec_states, rec_actions, rec_rewards = [], [], []
    done = False
    t = 0
    while not done:
        hist_states.append((state - bundle.state_mean) / bundle.state_std)
        hist_actions.append(np.zeros(spec.d_a))
        hist_rtgs.append(g / bundle.rtg_norm if cfg.condition_on_rtg else 0.0)
        hist_steps.append(min(t, cfg.max_episode_len - 1))

        n = min(len(hist_states), k)
        pad = k - n
        ctx = ContextWindow(
            rtgs=np.concatenate([np.zeros(pad), hist_rtgs[-n:]]),
            states=np.concatenate(
                [np.zeros((pad, spec.d_s)), np.stack(hist_states[-n:])]
            ),
            actions=np.concatenate(
                [np.zeros((pad, spec.d_a)), np.stack(hist_actions[-n:])]
            ),
            timesteps=np.concatenate(
                [np.zeros(pad, dtype=int), np.array(hist_steps[-n:])]
            ),
            pad_mask=np.concatenate(
                [np.zeros(pad, dtype=bool), np.ones(n, dtype=bool)]
            ),
        )
        batch = ContextBatch.from_windows([ctx])
        coarse = predict_coarse_actions_batch(batch, bundle.dt3).data[0, -1]
        if mode == "drdt3":
            action = sample_action(
                coarse, bundle.noise, sched, rng, action_bound=spec.a_max,
                sqrt_beta_noise=cfg.sqrt_beta_noise,
            )
        elif mode == "dt3-only":
            action = np.clip(coarse, -spec.a_max, spec.a_max)
        else:
            raise ValueError(f"unknown rollout mode {mode!r}")

        hist_actions[-1] = action
        rec_states.append(state)
        rec_actions.append(action)
        state, r, done = env.step(action)
        rec_rewards.append(r)
        g -= r
        t += 1

    traj = Trajectory(np.array(rec_states), np.array(rec_actions),
                      np.array(rec_rewards))
    return traj.ret, traj, g0
