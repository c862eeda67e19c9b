"""Per-subarray TD3 training over quantized phase actions.

Each subarray is driven by its own agent.  The environment state is the
previously applied phase vector; an action is the next phase vector
(continuous from the actor, then quantized to the panel's resolution);
the reward is +1 when the received power strictly improved and -1
otherwise.  The task is continuing: no terminal states, no episodes.

Twin critics with clipped-noise target smoothing and delayed updates
follow the usual TD3 recipe; exploration noise decays exponentially with
the step count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beams import BeamMatrix, quantize_phases, wrap_signed
from .nets import Network, adam_step, build_actor, build_critic, soft_update


class TrainingError(RuntimeError):
    """Diverged training run (non-finite loss or gradient)."""


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters of one subarray agent.

    Noise fields are variances; the applied standard deviations decay as
    sqrt(variance) * exp(-decay * step).  ``actor_period`` steps between
    actor updates must not exceed ``target_period`` steps between target
    refreshes.  ``fine_tune_layers`` builds actor and critics with the
    extra pre-output stage used by transfer fine-tuning; scratch training
    simply trains it like any other layer.
    """

    learning_rate: float = 1e-3
    exploration_noise_variance: float = 0.5
    exploration_noise_decay: float = 1e-5
    exploration_noise_floor: float = 1e-5
    target_noise_variance: float = 0.1
    target_noise_decay: float = 1e-4
    target_noise_clip: float = 0.5
    actor_period: int = 1
    target_period: int = 3
    target_smoothing: float = 0.005
    minibatch: int = 64
    replay_capacity: int = 100_000
    discount: float = 0.99
    greedy_rollout: int = 8
    fine_tune_layers: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.actor_period < 1 or self.target_period < self.actor_period:
            raise ValueError("need target_period >= actor_period >= 1")
        if self.minibatch < 1 or self.replay_capacity < self.minibatch:
            raise ValueError("replay_capacity must hold at least one minibatch")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def noise_std(self, step: int) -> float:
        sigma = np.sqrt(self.exploration_noise_variance) * np.exp(-self.exploration_noise_decay * step)
        return float(max(sigma, self.exploration_noise_floor))

    def target_noise_std(self, step: int) -> float:
        return float(np.sqrt(self.target_noise_variance) * np.exp(-self.target_noise_decay * step))


class SubarrayEnv:
    """Power measurement for one subarray block of the panel.

    Holds the complex channel block and the measurement variances; the
    power of a phase vector is |sum conj(w) h|^2 * sigma_s^2 + sigma_nu^2
    with w = exp(j phi)/sqrt(N).
    """

    def __init__(self, h_block: np.ndarray, subarray: int = 0,
                 signal_variance: float = 1.0, noise_variance: float = 0.0,
                 phase_bits: int = 3):
        h_block = np.asarray(h_block, dtype=np.complex128)
        if h_block.ndim != 2:
            raise ValueError("h_block must be 2-D")
        self.shape = h_block.shape
        self.subarray = int(subarray)
        self.signal_variance = float(signal_variance)
        self.noise_variance = float(noise_variance)
        self.phase_bits = int(phase_bits)
        self._h_flat = h_block.reshape(-1)
        self._scale = self.signal_variance / h_block.size

    @property
    def num_elements(self) -> int:
        return self._h_flat.size

    def replica(self) -> "SubarrayEnv":
        """Fresh copy for probe runs; shares the read-only channel."""
        env = SubarrayEnv.__new__(SubarrayEnv)
        env.shape = self.shape
        env.subarray = self.subarray
        env.signal_variance = self.signal_variance
        env.noise_variance = self.noise_variance
        env.phase_bits = self.phase_bits
        env._h_flat = self._h_flat
        env._scale = self._scale
        return env

    def power(self, signed_phases: np.ndarray) -> float:
        amp = np.exp(-1j * signed_phases.reshape(-1)) @ self._h_flat
        return (amp.real * amp.real + amp.imag * amp.imag) * self._scale + self.noise_variance

    def oracle_power(self) -> float:
        """Continuous-phase alignment bound for this block."""
        total = float(np.abs(self._h_flat).sum())
        return total * total * self._scale


@dataclass
class TD3Policy:
    """The six networks of one agent."""

    actor: Network
    critic1: Network
    critic2: Network
    target_actor: Network
    target_critic1: Network
    target_critic2: Network

    @classmethod
    def fresh(cls, n_elements: int, rng: np.random.Generator,
              fine_tune: bool = True, dtype=np.float64) -> "TD3Policy":
        actor = build_actor(n_elements, fine_tune=fine_tune, rng=rng, dtype=dtype)
        critic1 = build_critic(n_elements, fine_tune=fine_tune, rng=rng, dtype=dtype)
        critic2 = build_critic(n_elements, fine_tune=fine_tune, rng=rng, dtype=dtype)
        return cls(actor, critic1, critic2, actor.clone(), critic1.clone(), critic2.clone())

    @property
    def n_elements(self) -> int:
        return self.actor.in_dim

    def clone(self) -> "TD3Policy":
        """Deep parameter copy; target networks re-cloned from the mains
        and optimizer state reset, as after any transfer."""
        actor = self.actor.clone()
        critic1 = self.critic1.clone()
        critic2 = self.critic2.clone()
        return TD3Policy(actor, critic1, critic2,
                         actor.clone(), critic1.clone(), critic2.clone())

    def astype(self, dtype) -> "TD3Policy":
        actor = self.actor.astype(dtype)
        critic1 = self.critic1.astype(dtype)
        critic2 = self.critic2.astype(dtype)
        return TD3Policy(actor, critic1, critic2,
                         actor.clone(), critic1.clone(), critic2.clone())


class ReplayBuffer:
    """FIFO experience store over preallocated arrays."""

    def __init__(self, capacity: int, n_elements: int, dtype=np.float64):
        self.capacity = int(capacity)
        self.states = np.empty((capacity, n_elements), dtype=dtype)
        self.actions = np.empty((capacity, n_elements), dtype=dtype)
        self.rewards = np.empty(capacity, dtype=dtype)
        self.next_states = np.empty((capacity, n_elements), dtype=dtype)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, reward, next_state) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self._size < count:
            raise ValueError("not enough experiences to sample")
        return rng.integers(0, self._size, size=count)


def select_action(actor: Network, state: np.ndarray, noise_std: float,
                  rng: np.random.Generator, phase_bits: int) -> np.ndarray:
    """Noisy actor action quantized to signed panel phases.

    With ``noise_std`` 0 the map is deterministic in the actor parameters.
    """
    a = actor.forward(state)
    if noise_std > 0.0:
        a = a + noise_std * rng.standard_normal(a.shape[0])
    return wrap_signed(quantize_phases(a, phase_bits) * (2.0 * np.pi / (1 << phase_bits)))


@dataclass
class TrainResult:
    """Artifacts of one training run."""

    policy: TD3Policy
    powers: np.ndarray
    rewards: np.ndarray
    noise_stds: np.ndarray
    critic_losses: np.ndarray
    final_pdi: BeamMatrix
    final_greedy_power: float
    oracle_power: float
    subarray: int
    steps: int

    @property
    def normalized_powers(self) -> np.ndarray:
        return self.powers / self.oracle_power


class SubarrayAgent:
    """Owns one TD3 policy, its replay buffer, and the step loop.

    All randomness flows through the one generator handed in, in a fixed
    per-step draw order, so runs are exactly repeatable.
    """

    def __init__(self, env: SubarrayEnv, cfg: AgentConfig, rng: np.random.Generator,
                 policy: TD3Policy | None = None,
                 actor_rates=None, critic_rates=None):
        self.env = env
        self.cfg = cfg
        self.rng = rng
        dtype = np.dtype(cfg.dtype)
        n = env.num_elements
        if policy is None:
            policy = TD3Policy.fresh(n, rng, fine_tune=cfg.fine_tune_layers, dtype=dtype)
        elif policy.actor.dtype != dtype:
            policy = policy.astype(dtype)
        self.policy = policy
        self.buffer = ReplayBuffer(cfg.replay_capacity, n, dtype=dtype)
        self.actor_rates = np.full(policy.actor.num_param_layers, cfg.learning_rate) \
            if actor_rates is None else np.asarray(actor_rates, dtype=np.float64)
        self.critic_rates = np.full(policy.critic1.num_param_layers, cfg.learning_rate) \
            if critic_rates is None else np.asarray(critic_rates, dtype=np.float64)
        if self.actor_rates.shape != (policy.actor.num_param_layers,):
            raise ValueError("actor_rates length does not match the actor stack")
        if self.critic_rates.shape != (policy.critic1.num_param_layers,):
            raise ValueError("critic_rates length does not match the critic stack")
        self.steps = 0
        self.n_elements = n
        self.state = np.zeros(n, dtype=dtype)
        self.prev_power = env.power(self.state)
        k = cfg.minibatch
        self._sa = np.empty((k, 2 * n), dtype=dtype)
        self._s2a2 = np.empty((k, 2 * n), dtype=dtype)

    def step(self) -> tuple[float, float, float, float]:
        """One interaction plus any due updates.

        Returns (power, reward, noise_std, critic_loss); the loss is nan
        on steps before learning starts.
        """
        cfg = self.cfg
        env = self.env
        n = self.n_elements
        self.steps += 1
        t = self.steps

        sigma = cfg.noise_std(t)
        action = select_action(self.policy.actor, self.state, sigma, self.rng, env.phase_bits)
        power = env.power(action)
        reward = 1.0 if power > self.prev_power else -1.0
        self.buffer.push(self.state, action, reward, action)
        self.state = action.astype(self._sa.dtype, copy=False)
        self.prev_power = power

        loss = float("nan")
        if len(self.buffer) >= cfg.minibatch:
            loss = self._update(t)
        return power, reward, sigma, loss

    def _update(self, t: int) -> float:
        cfg = self.cfg
        pol = self.policy
        k = cfg.minibatch
        n = self.n_elements
        idx = self.buffer.sample_indices(self.rng, k)
        s = self.buffer.states[idx]
        a = self.buffer.actions[idx]
        r = self.buffer.rewards[idx]
        s2 = self.buffer.next_states[idx]

        # target actions with clipped smoothing noise, kept inside [-pi, pi]
        a2 = pol.target_actor.forward(s2)
        eps = self.rng.standard_normal((k, n), dtype=self._sa.dtype) * cfg.target_noise_std(t)
        np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip, out=eps)
        a2 = a2 + eps
        np.clip(a2, -np.pi, np.pi, out=a2)

        self._s2a2[:, :n] = s2
        self._s2a2[:, n:] = a2
        q1t = pol.target_critic1.forward(self._s2a2)
        q2t = pol.target_critic2.forward(self._s2a2)
        y = r.reshape(-1, 1) + cfg.discount * np.minimum(q1t, q2t)

        self._sa[:, :n] = s
        self._sa[:, n:] = a
        loss_total = 0.0
        for critic in (pol.critic1, pol.critic2):
            q = critic.forward(self._sa, train=True)
            err = q - y
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite critic loss at step {t}")
            grads, _ = critic.backward(err * (2.0 / k))
            adam_step(critic, grads, self.critic_rates)
            loss_total += loss

        if t % cfg.actor_period == 0:
            ap = pol.actor.forward(s, train=True)
            self._sa[:, :n] = s
            self._sa[:, n:] = ap
            pol.critic1.forward(self._sa, train=True)
            dy = np.full((k, 1), -1.0 / k, dtype=self._sa.dtype)
            _, dsa = pol.critic1.backward(dy, param_grads=False)
            da = dsa[:, n:]
            if not np.isfinite(da.sum()):
                raise TrainingError(f"non-finite actor gradient at step {t}")
            agrads, _ = pol.actor.backward(da)
            adam_step(pol.actor, agrads, self.actor_rates)

        if t % cfg.target_period == 0:
            tau = cfg.target_smoothing
            soft_update(pol.target_actor, pol.actor, tau)
            soft_update(pol.target_critic1, pol.critic1, tau)
            soft_update(pol.target_critic2, pol.critic2, tau)
        return loss_total / 2.0

    def run(self, budget: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        powers = np.empty(budget)
        rewards = np.empty(budget)
        sigmas = np.empty(budget)
        losses = np.empty(budget)
        for i in range(budget):
            powers[i], rewards[i], sigmas[i], losses[i] = self.step()
        return powers, rewards, sigmas, losses

    def greedy_pdi(self) -> tuple[BeamMatrix, float]:
        """Best quantized action on a short noise-free rollout from the
        current state; the deployment pattern of this agent."""
        state = self.state.copy()
        best_power = -np.inf
        best = None
        for _ in range(max(1, self.cfg.greedy_rollout)):
            action = select_action(self.policy.actor, state, 0.0, self.rng, self.env.phase_bits)
            p = self.env.power(action)
            if p > best_power:
                best_power = p
                best = action
            state = action
        idx = quantize_phases(best, self.env.phase_bits).reshape(self.env.shape)
        return BeamMatrix(idx, self.env.phase_bits, subarray=self.env.subarray), float(best_power)


def train_subarray(env: SubarrayEnv, cfg: AgentConfig, budget: int,
                   rng: np.random.Generator,
                   policy: TD3Policy | None = None,
                   actor_rates=None, critic_rates=None) -> TrainResult:
    """Train one subarray agent for ``budget`` steps and collect traces."""
    agent = SubarrayAgent(env, cfg, rng, policy=policy,
                          actor_rates=actor_rates, critic_rates=critic_rates)
    powers, rewards, sigmas, losses = agent.run(budget)
    pdi, greedy_power = agent.greedy_pdi()
    return TrainResult(
        policy=agent.policy,
        powers=powers,
        rewards=rewards,
        noise_stds=sigmas,
        critic_losses=losses,
        final_pdi=pdi,
        final_greedy_power=greedy_power,
        oracle_power=env.oracle_power(),
        subarray=env.subarray,
        steps=agent.steps,
    )
