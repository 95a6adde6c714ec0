"""Convergence checks on quadratic toy networks.

Every node minimizes f_i(theta) = 0.5 * ||theta - c_i||^2, which has
curvature lambda = L = 1, so the clustered protocol's guarantees can be
checked numerically: per-cluster distance to the optimum should contract
at least as fast as (1 - p * lambda / (8 L)) per round until it hits the
noise floor, and with exact gradients the distance decays exactly like
(1 - eta)^(t * H).

Geometry: coordinate 0 is the core and is shared by all cluster optima
(value 0); the optima sit Delta apart along coordinate 1 at j * Delta.
Per-node centers add a small offset (in head coordinates, re-centered so
each cluster's optimum is exactly the mean of its members' centers).
Batch noise perturbs only the gradients; losses stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParamVector, assemble
from .protocols import NodeState, ProtocolConfig, TOPOLOGY_TAG, facade_round
from .topology import gen_r_regular


@dataclass(frozen=True)
class TheoryParams:
    """Constants entering the convergence statements."""

    lambda_cvx: float = 1.0
    L: float = 1.0
    alpha: float = 0.25
    Delta: float = 4.0
    p: float = 1.0  # minimum cluster fraction: min_j (cluster j size) / n
    eps: float = 0.25
    delta_prob: float = 0.1
    sigma2: float = 0.0
    nu2: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.lambda_cvx <= self.L:
            raise ValueError("need 0 < lambda <= L")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.Delta < 0 or self.eps <= 0:
            raise ValueError("Delta must be >= 0 and eps > 0")

    @property
    def contraction_factor(self) -> float:
        """Per-round distance multiplier the theory promises at worst."""
        return 1.0 - self.p * self.lambda_cvx / (8.0 * self.L)

    @property
    def init_radius(self) -> float:
        """Largest compliant distance from the init to each optimum."""
        return (0.5 - self.alpha) * math.sqrt(self.lambda_cvx / self.L) * self.Delta

    def settling_rounds(self) -> int:
        """Rounds after which the distance should be below eps."""
        if self.Delta == 0:
            return 0
        return math.ceil(
            (8.0 * self.L / (self.p * self.lambda_cvx))
            * math.log(2.0 * self.Delta / self.eps)
        )


@dataclass(frozen=True)
class QuadraticNetwork:
    """A population of quadratic objectives grouped into clusters."""

    sizes: tuple[int, ...]
    dim: int
    Delta: float
    noise: float
    centers: np.ndarray  # (n, dim) per-node minimizers
    optima: np.ndarray  # (k, dim) per-cluster optima (mean of member centers)

    @property
    def num_clusters(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return sum(self.sizes)

    def true_cluster(self, node: int) -> int:
        acc = 0
        for j, size in enumerate(self.sizes):
            acc += size
            if node < acc:
                return j
        raise IndexError(f"node {node} out of range")

    def cluster_nodes(self, cluster: int) -> range:
        start = sum(self.sizes[:cluster])
        return range(start, start + self.sizes[cluster])


def build_quadratic_network(
    k: int,
    sizes,
    Delta: float,
    noise: float,
    dim: int,
    seed,
    offset_norm: float | None = None,
) -> QuadraticNetwork:
    """Place k cluster optima Delta apart and scatter nodes around them.

    ``offset_norm`` caps the per-node offset length (default Delta/10);
    pass 0 to put every node exactly at its cluster optimum. Offsets live
    in head coordinates and are re-centered per cluster, so each cluster
    optimum is the exact mean of its members' centers. Singleton clusters
    always get a zero offset.
    """
    sizes = tuple(int(s) for s in sizes)
    if k < 1 or len(sizes) != k or any(s < 1 for s in sizes):
        raise ValueError("sizes must list a positive node count per cluster")
    if dim < 2:
        raise ValueError("need dim >= 2: one core coordinate plus head coordinates")
    if Delta < 0 or noise < 0:
        raise ValueError("Delta and noise must be non-negative")
    if offset_norm is None:
        offset_norm = Delta / 10.0
    if offset_norm < 0:
        raise ValueError("offset_norm must be non-negative")

    optima = np.zeros((k, dim))
    optima[:, 1] = Delta * np.arange(k)

    rng = np.random.default_rng(seed)
    centers = np.zeros((sum(sizes), dim))
    for j in range(k):
        nodes = list(range(sum(sizes[:j]), sum(sizes[: j + 1])))
        block = np.zeros((len(nodes), dim))
        if len(nodes) > 1 and offset_norm > 0:
            raw = rng.normal(size=(len(nodes), dim - 1))
            raw -= raw.mean(axis=0)
            worst = np.linalg.norm(raw, axis=1).max()
            if worst > 0:
                raw *= offset_norm / worst
            block[:, 1:] = raw
        centers[nodes] = optima[j] + block
    return QuadraticNetwork(sizes, dim, float(Delta), float(noise), centers, optima)


@dataclass
class QuadraticObjective:
    """Node objective 0.5 * ||theta - c||^2 with optional gradient noise.

    A "batch" is the round's gradient-noise vector; the loss itself is
    always exact, only gradients are perturbed.
    """

    center: np.ndarray
    noise: float

    def sample_round_batch(self, rng: np.random.Generator) -> np.ndarray:
        if self.noise == 0.0:
            return np.zeros_like(self.center)
        return self.noise * rng.standard_normal(self.center.size)

    def batch_loss(self, params: ParamVector, batch: np.ndarray) -> float:
        diff = params.values - self.center
        return 0.5 * float(diff @ diff)

    def train(self, params, batch, eta, steps):
        theta = params.values.copy()
        first = 0.5 * float((theta - self.center) @ (theta - self.center))
        for _ in range(steps):
            theta -= eta * ((theta - self.center) + batch)
        return ParamVector(theta, params.core_len), first


def compliant_init(
    network: QuadraticNetwork, tparams: TheoryParams, seed, margin: float = 1.0
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Shared init with every bank slot within the allowed radius of its optimum.

    Returns (core, bank). The core coordinate is common to all slots, so
    the distance budget splits between a core perturbation and per-slot
    head perturbations; each slot ends up exactly ``init_radius * margin``
    from its cluster optimum.
    """
    if not 0 <= margin <= 1:
        raise ValueError("margin must lie in [0, 1]")
    dist = tparams.init_radius * margin
    rng = np.random.default_rng(seed)
    core_part = 0.3 * dist * (1.0 if rng.random() < 0.5 else -1.0)
    head_budget = math.sqrt(max(dist * dist - core_part * core_part, 0.0))
    core = np.array([network.optima[0, 0] + core_part])
    bank = []
    for j in range(network.num_clusters):
        direction = rng.standard_normal(network.dim - 1)
        norm = np.linalg.norm(direction)
        if norm == 0:
            direction = np.zeros(network.dim - 1)
            direction[0] = 1.0
            norm = 1.0
        head = network.optima[j, 1:] + head_budget * direction / norm
        bank.append(head)
    return core, bank


def make_quadratic_states(
    network: QuadraticNetwork, config: ProtocolConfig, tparams: TheoryParams, seed
) -> list[NodeState]:
    """Node states over the quadratic objectives with a compliant shared init."""
    core, bank = compliant_init(network, tparams, seed)
    states = []
    for i in range(network.num_nodes):
        states.append(
            NodeState(
                i,
                core.copy(),
                [h.copy() for h in bank],
                QuadraticObjective(network.centers[i], network.noise),
                np.random.default_rng(np.random.SeedSequence([int(seed), 2, i])),
            )
        )
    return states


@dataclass
class ContractionReport:
    """Distance-to-optimum series per cluster plus the pass/fail verdict."""

    factor_bound: float
    eps: float
    settling_rounds: int
    distances: list[list[float]]  # [cluster][round], entry 0 is the init
    true_distances: list[list[float]]
    reporter_counts: list[list[int]]  # [cluster][round]
    selections: list[list[int]]  # [round][node]
    noise_floor: list[float]
    fitted_ratio: list[float | None] = field(default_factory=list)
    populated_ok: bool = True
    rate_ok: bool = True
    terminal_ok: bool = True
    diagnostics: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.populated_ok and self.rate_ok and self.terminal_ok

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "factor_bound": self.factor_bound,
            "eps": self.eps,
            "settling_rounds": self.settling_rounds,
            "populated_ok": self.populated_ok,
            "rate_ok": self.rate_ok,
            "terminal_ok": self.terminal_ok,
            "noise_floor": self.noise_floor,
            "fitted_ratio": self.fitted_ratio,
            "distances": self.distances,
            "true_distances": self.true_distances,
            "reporter_counts": self.reporter_counts,
            "diagnostics": self.diagnostics,
        }


def _slot_distance(states, nodes, slot: int, optimum: np.ndarray) -> float:
    stack = np.stack(
        [assemble(states[i].core, states[i].head_bank[slot]).values for i in nodes]
    )
    return float(np.linalg.norm(stack.mean(axis=0) - optimum))


def contraction_check(
    network: QuadraticNetwork, config: ProtocolConfig, tparams: TheoryParams
) -> ContractionReport:
    """Drive the clustered protocol on the quadratic network and audit it.

    Tracks d_j(t) = distance between the mean model of round-t reporters
    of cluster j and that cluster's optimum. Checks that every cluster
    keeps reporters, that pre-plateau rounds contract at least by the
    promised factor (plus the measured noise floor), and that the final
    distance is below eps plus the noise floor.
    """
    if config.algorithm != "facade" or config.k != network.num_clusters:
        raise ValueError("config must run facade with k equal to the cluster count")
    if config.warmup_rounds != 0:
        raise ValueError("theory runs assume no warm-up (warmup_rounds=0)")
    states = make_quadratic_states(network, config, tparams, config.seed)
    k, n = network.num_clusters, network.num_nodes

    distances: list[list[float]] = [
        [_slot_distance(states, range(n), j, network.optima[j])] for j in range(k)
    ]
    true_distances: list[list[float]] = [
        [
            _slot_distance(states, network.cluster_nodes(j), j, network.optima[j])
        ]
        for j in range(k)
    ]
    reporter_counts: list[list[int]] = [[] for _ in range(k)]
    selections: list[list[int]] = []
    diagnostics: list[str] = []
    populated_ok = True

    for t in range(config.rounds):
        topo = gen_r_regular(
            n,
            config.degree,
            np.random.SeedSequence([config.seed, TOPOLOGY_TAG, t]),
            round_index=t,
        )
        states, _ = facade_round(states, topo, t, config)
        selections.append([st.last_selected for st in states])
        for j in range(k):
            reporters = [st.node_id for st in states if st.last_selected == j]
            reporter_counts[j].append(len(reporters))
            if reporters:
                distances[j].append(
                    _slot_distance(states, reporters, j, network.optima[j])
                )
            else:
                populated_ok = False
                diagnostics.append(f"cluster {j} had no reporters in round {t}")
                distances[j].append(float("nan"))
            true_distances[j].append(
                _slot_distance(states, network.cluster_nodes(j), j, network.optima[j])
            )

    factor = tparams.contraction_factor
    tail = max(1, config.rounds // 5)
    noise_floor = []
    for j in range(k):
        valid = [d for d in distances[j][-tail:] if not math.isnan(d)]
        noise_floor.append(float(np.mean(valid)) if valid else float("nan"))
    rate_ok = True
    fitted_ratio: list[float | None] = []
    for j in range(k):
        series = distances[j]
        threshold = max(2.0 * noise_floor[j], 1e-12)
        log_ratios = []
        for t in range(len(series) - 1):
            d_now, d_next = series[t], series[t + 1]
            if math.isnan(d_now) or math.isnan(d_next):
                continue
            if d_now <= threshold:
                continue
            if d_next > factor * d_now + noise_floor[j] + 1e-12:
                rate_ok = False
                diagnostics.append(
                    f"cluster {j} contracted too slowly at round {t}: "
                    f"{d_next:.3e} > {factor:.4f} * {d_now:.3e} + floor"
                )
            if d_next > 0:
                log_ratios.append(math.log(d_next / d_now))
        fitted_ratio.append(
            math.exp(sum(log_ratios) / len(log_ratios)) if log_ratios else None
        )
    terminal_ok = True
    for j in range(k):
        final = distances[j][-1]
        if math.isnan(final) or final > tparams.eps + noise_floor[j]:
            terminal_ok = False
            diagnostics.append(
                f"cluster {j} terminal distance {final:.3e} above eps + floor"
            )
    return ContractionReport(
        factor_bound=factor,
        eps=tparams.eps,
        settling_rounds=tparams.settling_rounds(),
        distances=distances,
        true_distances=true_distances,
        reporter_counts=reporter_counts,
        selections=selections,
        noise_floor=noise_floor,
        fitted_ratio=fitted_ratio,
        populated_ok=populated_ok,
        rate_ok=rate_ok,
        terminal_ok=terminal_ok,
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class RecoveryReport:
    """Fraction of nodes whose final head matches their true cluster."""

    applicable: bool
    rate: float | None
    per_trial: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "applicable": self.applicable,
            "rate": self.rate,
            "per_trial": list(self.per_trial),
        }


def cluster_recovery_rate(
    network: QuadraticNetwork, config: ProtocolConfig, trials: int, tparams: TheoryParams
) -> RecoveryReport:
    """Monte Carlo estimate of final-round cluster identification accuracy.

    Not applicable when Delta = 0: coincident optima make every head
    equally good, so "recovering the true cluster" is undefined.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if network.Delta == 0:
        return RecoveryReport(False, None, ())
    rates = []
    for trial in range(trials):
        trial_seed = int(
            np.random.SeedSequence([config.seed, 17, trial]).generate_state(1)[0]
        )
        trial_config = ProtocolConfig(
            algorithm=config.algorithm,
            k=config.k,
            eta=config.eta,
            local_steps=config.local_steps,
            batch_size=config.batch_size,
            rounds=config.rounds,
            degree=config.degree,
            warmup_rounds=config.warmup_rounds,
            eval_every=config.eval_every,
            seed=trial_seed,
        )
        states = make_quadratic_states(network, trial_config, tparams, trial_seed)
        n = network.num_nodes
        for t in range(trial_config.rounds):
            topo = gen_r_regular(
                n,
                trial_config.degree,
                np.random.SeedSequence([trial_seed, TOPOLOGY_TAG, t]),
                round_index=t,
            )
            states, _ = facade_round(states, topo, t, trial_config)
        hits = sum(
            1 for st in states if st.last_selected == network.true_cluster(st.node_id)
        )
        rates.append(hits / n)
    return RecoveryReport(True, float(np.mean(rates)), tuple(rates))
