"""Policy transfer: subarray-to-subarray propagation and focal-point blending.

Propagation trains a few seed subarrays from scratch, then grows outward:
each remaining subarray briefly probes its nearest trained neighbors
(cheap high-rate training of a cloned policy on the student's own
channel), scores the probe against the teacher by rotation-aware circular
correlation, and either fine-tunes the best teacher's policy under a
layered learning-rate ramp or falls back to scratch training.

Blending composes a starting policy for a new focal point as a convex
combination of stored library policies, weighted by how well each adapts
to the new point during a short probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .beams import BeamMatrix, assemble_matrix, received_power, subarray_channel
from .channel import ChannelMatrix
from .geometry import ApertureConfig, aperture_center, as_point, subarray_center
from .library import LibraryEntry, PolicyLibrary, snapshot_entry
from .nets import Network, blend_networks
from .pdi import EccResult, ecc, phase_image, rotation_grid
from .seeding import spawn
from .td3 import AgentConfig, SubarrayEnv, TD3Policy, TrainResult, train_subarray


@dataclass(frozen=True)
class QllSchedule:
    """Layered learning-rate ramp for fine-tuning a transferred network.

    Network layers sit on an axis 1..last_layer; layers below
    ``first_liquid`` stay frozen, layers from there ramp linearly from
    ``ramp_start * output_rate`` up to ``output_rate`` at the output.
    Parameterized layers of a P-layer stack map onto the axis two apart,
    ending at ``last_layer``.
    """

    first_liquid: int = 4
    last_layer: int = 8
    output_rate: float = 0.7e-4
    ramp_start: float = 5.0 / 7.0

    def __post_init__(self):
        if not 1 <= self.first_liquid <= self.last_layer:
            raise ValueError("need 1 <= first_liquid <= last_layer")
        if self.output_rate <= 0:
            raise ValueError("output_rate must be positive")
        if not 0.0 < self.ramp_start <= 1.0:
            raise ValueError("ramp_start must lie in (0, 1]")


def qll_rates(schedule: QllSchedule) -> np.ndarray:
    """Dense per-axis learning rates for axis positions 1..last_layer."""
    rates = np.zeros(schedule.last_layer)
    n0 = schedule.first_liquid
    nt = schedule.last_layer
    for n in range(n0, nt + 1):
        if nt == n0:
            g = 1.0
        else:
            g = schedule.ramp_start + (1.0 - schedule.ramp_start) * (n - n0) / (nt - n0)
        rates[n - 1] = schedule.output_rate * g
    return rates


def qll_profile(net: Network, schedule: QllSchedule) -> np.ndarray:
    """Per-parameter-layer rates for ``net`` under the ramp.

    Parameter layer p of P maps to axis position last_layer - 2*(P - p);
    positions off the axis or below the ramp are frozen (rate 0).
    """
    dense = qll_rates(schedule)
    p_total = net.num_param_layers
    rates = np.zeros(p_total)
    for p in range(1, p_total + 1):
        n = schedule.last_layer - 2 * (p_total - p)
        if 1 <= n <= schedule.last_layer:
            rates[p - 1] = dense[n - 1]
    return rates


def hard_switch_profile(net: Network, schedule: QllSchedule) -> np.ndarray:
    """Single liquid output layer: only the last parameter layer trains."""
    rates = np.zeros(net.num_param_layers)
    rates[-1] = schedule.output_rate
    return rates


@dataclass(frozen=True)
class PropagationConfig:
    """Knobs of the propagation loop.

    ``accept_threshold`` stops probing more candidates once exceeded
    (``early_exit`` "high" raises that bar to ``transfer_threshold``);
    ``transfer_threshold`` gates fine-tuning versus scratch training.
    ``seed_budget`` lets seed subarrays train longer than students;
    None means the shared budget.
    """

    seed_count: int = 1
    candidate_count: int = 4
    seed_budget: int | None = None
    accept_threshold: float = 0.5
    transfer_threshold: float = 0.9
    probe_budget: int = 1000
    probe_learning_rate: float = 1e-2
    probe_noise_decay: float = 5e-4
    early_exit: str = "low"  # "low" | "high"
    seed_placement: str = "center"  # "center" | "random"
    rotation_step_deg: float = 10.0
    qll: QllSchedule = field(default_factory=QllSchedule)

    def __post_init__(self):
        if self.seed_count < 1:
            raise ValueError("seed_count must be >= 1")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        if self.seed_budget is not None and self.seed_budget < 1:
            raise ValueError("seed_budget must be >= 1 when set")
        if self.early_exit not in ("low", "high"):
            raise ValueError("early_exit must be 'low' or 'high'")
        if self.seed_placement not in ("center", "random"):
            raise ValueError("seed_placement must be 'center' or 'random'")


@dataclass
class ProbeResult:
    teacher: int
    ecc: float
    angle: float
    greedy_power: float


@dataclass
class Assignment:
    """How one subarray got its policy."""

    subarray: int
    mode: str  # "seed" | "qll" | "scratch"
    teacher: int | None = None
    ecc: float = float("nan")
    angle: float = float("nan")
    probes: list[ProbeResult] = field(default_factory=list)


@dataclass
class PropagationResult:
    matrix: BeamMatrix
    results: dict[int, TrainResult]
    assignments: list[Assignment]
    seed_subarrays: list[int]


def probe_config(agent_cfg: AgentConfig, learning_rate: float, noise_decay: float,
                 noise_variance: float | None = None) -> AgentConfig:
    kwargs = dict(learning_rate=learning_rate, exploration_noise_decay=noise_decay)
    if noise_variance is not None:
        kwargs["exploration_noise_variance"] = noise_variance
    return replace(agent_cfg, **kwargs)


def probe_teacher(env: SubarrayEnv, teacher_policy: TD3Policy, teacher_pdi: np.ndarray,
                  prop_cfg: PropagationConfig, agent_cfg: AgentConfig,
                  rng: np.random.Generator) -> tuple[EccResult, TrainResult]:
    """Briefly adapt a clone of the teacher on the student's channel and
    score the resulting pattern against the teacher's.

    The teacher's own policy is never touched; the probe trains a clone
    on a fresh environment replica at a high learning rate with fast
    noise decay.
    """
    cfg = probe_config(agent_cfg, prop_cfg.probe_learning_rate, prop_cfg.probe_noise_decay)
    result = train_subarray(env.replica(), cfg, prop_cfg.probe_budget, rng,
                            policy=teacher_policy.clone())
    angles = rotation_grid(prop_cfg.rotation_step_deg)
    score = ecc(phase_image(result.final_pdi), teacher_pdi, angles)
    return score, result


def _module_coords(aperture: ApertureConfig, m: int) -> tuple[int, int]:
    return divmod(m, aperture.modules_cols)


def _grid_distance(aperture: ApertureConfig, a: int, b: int) -> float:
    ra, ca = _module_coords(aperture, a)
    rb, cb = _module_coords(aperture, b)
    return float(np.hypot(ra - rb, ca - cb))


def _neighbors(aperture: ApertureConfig, m: int) -> list[int]:
    r, c = _module_coords(aperture, m)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < aperture.modules_rows and 0 <= cc < aperture.modules_cols:
            out.append(rr * aperture.modules_cols + cc)
    return out


def pick_seed_subarrays(aperture: ApertureConfig, prop_cfg: PropagationConfig,
                        rng: np.random.Generator) -> list[int]:
    """Seed subarrays: nearest the panel center by default, or random."""
    count = min(prop_cfg.seed_count, aperture.num_subarrays)
    if prop_cfg.seed_placement == "random":
        return sorted(int(v) for v in rng.choice(aperture.num_subarrays, size=count, replace=False))
    center = aperture_center(aperture)
    ranked = sorted(
        range(aperture.num_subarrays),
        key=lambda m: (float(np.linalg.norm(subarray_center(aperture, m) - center)), m),
    )
    return sorted(ranked[:count])


def policy_propagation(
    aperture: ApertureConfig,
    h: ChannelMatrix,
    agent_cfg: AgentConfig,
    prop_cfg: PropagationConfig,
    budget: int,
    master_seed: int,
    signal_variance: float = 1.0,
    noise_variance: float = 0.0,
) -> PropagationResult:
    """Train every subarray, reusing neighbors' policies where the probe
    correlation clears the transfer gate.

    Students are visited in index order among those adjacent (4-neighbor)
    to the trained set; per-student candidates are the nearest trained
    subarrays in module-grid distance.
    """
    if h.entries.shape != (aperture.rows, aperture.cols):
        raise ValueError("channel matrix does not match the aperture grid")
    envs = {
        m: SubarrayEnv(subarray_channel(h, aperture, m), subarray=m,
                       signal_variance=signal_variance, noise_variance=noise_variance,
                       phase_bits=aperture.phase_bits)
        for m in range(aperture.num_subarrays)
    }
    rng_seed_pick = spawn(master_seed, "seed-placement")
    seeds = pick_seed_subarrays(aperture, prop_cfg, rng_seed_pick)

    results: dict[int, TrainResult] = {}
    assignments: list[Assignment] = []
    pdis: dict[int, np.ndarray] = {}

    seed_budget = budget if prop_cfg.seed_budget is None else prop_cfg.seed_budget
    for m in seeds:
        res = train_subarray(envs[m], agent_cfg, seed_budget, spawn(master_seed, "train", m))
        results[m] = res
        pdis[m] = phase_image(res.final_pdi)
        assignments.append(Assignment(subarray=m, mode="seed"))

    exit_bar = (prop_cfg.accept_threshold if prop_cfg.early_exit == "low"
                else prop_cfg.transfer_threshold)

    remaining = [m for m in range(aperture.num_subarrays) if m not in results]
    while remaining:
        adjacent = [m for m in remaining if any(n in results for n in _neighbors(aperture, m))]
        student = adjacent[0] if adjacent else remaining[0]
        remaining.remove(student)

        trained = sorted(results)
        candidates = sorted(trained, key=lambda t: (_grid_distance(aperture, student, t), t))
        candidates = candidates[:prop_cfg.candidate_count]

        probes: list[ProbeResult] = []
        best: ProbeResult | None = None
        for teacher in candidates:
            score, probe_run = probe_teacher(
                envs[student], results[teacher].policy, pdis[teacher],
                prop_cfg, agent_cfg, spawn(master_seed, "probe", student, teacher))
            record = ProbeResult(teacher=teacher, ecc=score.value, angle=score.angle,
                                 greedy_power=probe_run.final_greedy_power)
            probes.append(record)
            if best is None or record.ecc > best.ecc:
                best = record
            if record.ecc > exit_bar:
                break

        train_rng = spawn(master_seed, "train", student)
        if best is not None and best.ecc > prop_cfg.transfer_threshold:
            teacher_policy = results[best.teacher].policy
            actor_rates = qll_profile(teacher_policy.actor, prop_cfg.qll)
            critic_rates = qll_profile(teacher_policy.critic1, prop_cfg.qll)
            res = train_subarray(envs[student], agent_cfg, budget, train_rng,
                                 policy=teacher_policy.clone(),
                                 actor_rates=actor_rates, critic_rates=critic_rates)
            assignments.append(Assignment(subarray=student, mode="qll", teacher=best.teacher,
                                          ecc=best.ecc, angle=best.angle, probes=probes))
        else:
            res = train_subarray(envs[student], agent_cfg, budget, train_rng)
            top = best or ProbeResult(-1, float("nan"), float("nan"), float("nan"))
            assignments.append(Assignment(subarray=student, mode="scratch",
                                          teacher=None, ecc=top.ecc, angle=top.angle,
                                          probes=probes))
        results[student] = res
        pdis[student] = phase_image(res.final_pdi)

    matrix = assemble_matrix([results[m].final_pdi for m in range(aperture.num_subarrays)],
                             aperture.modules_rows, aperture.modules_cols)
    return PropagationResult(matrix=matrix, results=results,
                             assignments=assignments, seed_subarrays=seeds)


@dataclass(frozen=True)
class BlendingConfig:
    """Knobs of focal-point blending."""

    components: int = 3
    strategy: str = "nearest"  # "nearest" | "recent"
    distance_ceiling: float = float("inf")
    library_floor: int = 10
    probe_budget: int = 500
    probe_learning_rate: float = 1e-2
    probe_noise_variance: float = 0.05
    probe_noise_decay: float = 5e-4

    def __post_init__(self):
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.strategy not in ("nearest", "recent"):
            raise ValueError("strategy must be 'nearest' or 'recent'")
        if self.library_floor < 1:
            raise ValueError("library_floor must be >= 1")


def select_components(library: PolicyLibrary, focal_point,
                      cfg: BlendingConfig) -> list[tuple[LibraryEntry, float]]:
    """Component entries for a new focal point.

    "nearest" ranks by focal-point distance (ties by insertion order)
    and applies the distance ceiling; "recent" takes the newest entries.
    """
    if len(library) == 0:
        raise ValueError("policy library is empty")
    fp = as_point(focal_point)
    if cfg.strategy == "recent":
        picked = library.entries[-cfg.components:]
        return [(e, float(np.linalg.norm(e.focal_point - fp))) for e in picked]
    ranked = library.nearest(fp, len(library))
    ranked = [(e, d) for e, d in ranked if d <= cfg.distance_ceiling]
    if not ranked:
        raise ValueError("no library entry within the distance ceiling")
    return ranked[:cfg.components]


def blend_weights(probe_powers) -> np.ndarray:
    """Power-proportional convex weights; uniform if all probes are zero."""
    p = np.asarray(probe_powers, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("need a nonempty power vector")
    if np.any(p < 0):
        raise ValueError("probe powers must be nonnegative")
    total = p.sum()
    if total <= 0.0:
        import warnings

        warnings.warn("all probe powers are zero; blending uniformly")
        return np.full(p.size, 1.0 / p.size)
    return p / total


def blend_policies(policies: list[TD3Policy], weights) -> TD3Policy:
    """Convex parameter blend of same-architecture policies; targets are
    cloned from the blended mains and optimizer state starts fresh."""
    actor = blend_networks([p.actor for p in policies], weights)
    critic1 = blend_networks([p.critic1 for p in policies], weights)
    critic2 = blend_networks([p.critic2 for p in policies], weights)
    return TD3Policy(actor, critic1, critic2,
                     actor.clone(), critic1.clone(), critic2.clone())


@dataclass
class BlendingResult:
    matrix: BeamMatrix
    results: dict[int, TrainResult]
    weights: np.ndarray
    component_focal_points: np.ndarray
    component_distances: np.ndarray
    probe_powers: np.ndarray
    entry: LibraryEntry


def policy_blending(
    library: PolicyLibrary,
    aperture: ApertureConfig,
    h: ChannelMatrix,
    agent_cfg: AgentConfig,
    blend_cfg: BlendingConfig,
    budget: int,
    master_seed: int,
    signal_variance: float = 1.0,
    noise_variance: float = 0.0,
    append: bool = True,
) -> BlendingResult:
    """Warm-start training at a new focal point from blended library
    policies, then store the trained result as a new entry.

    Each selected component is probed: its policies briefly train on the
    new point's channel (high rate, low exploration) and the panel power
    of the adapted patterns becomes the component's blending weight.
    Probe divergence is not special-cased; a poor probe simply earns a
    small weight.
    """
    fp = h.focal_point
    components = select_components(library, fp, blend_cfg)
    n_sub = aperture.num_subarrays
    for entry, _ in components:
        if entry.num_subarrays != n_sub:
            raise ValueError("library entry subarray count does not match the aperture")

    envs = {
        m: SubarrayEnv(subarray_channel(h, aperture, m), subarray=m,
                       signal_variance=signal_variance, noise_variance=noise_variance,
                       phase_bits=aperture.phase_bits)
        for m in range(n_sub)
    }
    probe_cfg = probe_config(agent_cfg, blend_cfg.probe_learning_rate,
                             blend_cfg.probe_noise_decay, blend_cfg.probe_noise_variance)

    probe_powers = np.empty(len(components))
    for i, (entry, _) in enumerate(components):
        adapted = []
        for m in range(n_sub):
            run = train_subarray(envs[m].replica(), probe_cfg, blend_cfg.probe_budget,
                                 spawn(master_seed, "blend-probe", i, m),
                                 policy=entry.policies[m].clone())
            adapted.append(run.final_pdi)
        matrix = assemble_matrix(adapted, aperture.modules_rows, aperture.modules_cols)
        probe_powers[i] = received_power(matrix, h, signal_variance, noise_variance).power

    weights = blend_weights(probe_powers)

    results: dict[int, TrainResult] = {}
    for m in range(n_sub):
        start = blend_policies([entry.policies[m] for entry, _ in components], weights)
        results[m] = train_subarray(envs[m], agent_cfg, budget,
                                    spawn(master_seed, "blend-train", m), policy=start)

    matrix = assemble_matrix([results[m].final_pdi for m in range(n_sub)],
                             aperture.modules_rows, aperture.modules_cols)
    entry = snapshot_entry(
        fp,
        [results[m].policy for m in range(n_sub)],
        [results[m].final_pdi for m in range(n_sub)],
        aperture.phase_bits,
        metadata={
            "seed": int(master_seed),
            "budget": int(budget),
            "panel_power": received_power(matrix, h, signal_variance, noise_variance).power,
            "weights": [float(w) for w in weights],
        },
    )
    if append:
        library.add(entry)
    return BlendingResult(
        matrix=matrix,
        results=results,
        weights=weights,
        component_focal_points=np.stack([e.focal_point for e, _ in components]),
        component_distances=np.array([d for _, d in components]),
        probe_powers=probe_powers,
        entry=entry,
    )
