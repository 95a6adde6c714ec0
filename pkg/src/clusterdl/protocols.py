"""Round state machines for the four gossip training protocols.

All protocols share the same skeleton: every node holds a model core, one
or more heads, a private data shard and a private RNG stream. One round
moves every node forward in lockstep and returns fresh state, so rounds
compose as pure functions (RNG streams advance, everything else is by
value).

The clustered protocol ("facade") keeps a bank of k candidate heads.
Each round a node averages the cores it received, averages each head
slot over the senders that reported that slot, picks the head with the
lowest loss on a fresh local batch, and runs a few SGD steps on
core + chosen head with that same batch. The reported slot index rides
along with the next round's message.

Baselines: "el" is single-head averaging over a fresh random graph each
round, "dpsgd" is single-head train-then-average over a static graph with
a new batch every local step, and "deprl_lite" trains like dpsgd but
only ever exchanges cores, keeping heads local.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from . import fairness, tinynet
from .dataset import NodeDataset, sample_batch
from .params import ParamVector, assemble
from .topology import Topology, gen_r_regular, gen_static_ring, is_connected, neighbors

ALGORITHMS = ("facade", "el", "dpsgd", "deprl_lite")

#: SeedSequence tags so the independent streams never collide.
TOPOLOGY_TAG = 1
NODE_TAG = 2
INIT_TAG = 3


@dataclass(frozen=True)
class ProtocolConfig:
    """Hyperparameters of one protocol run."""

    algorithm: str
    k: int = 1
    eta: float = 0.05
    local_steps: int = 10
    batch_size: int = 8
    rounds: int = 300
    degree: int = 4
    warmup_rounds: int = 20
    eval_every: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.algorithm != "facade" and self.k != 1:
            raise ValueError(f"{self.algorithm} uses a single head; set k=1")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.local_steps < 1 or self.batch_size < 1:
            raise ValueError("local_steps and batch_size must be positive")
        if self.rounds < 0 or self.warmup_rounds < 0:
            raise ValueError("rounds and warmup_rounds must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")


class Objective(Protocol):
    """What a node optimizes; lets quadratic toys reuse the round code."""

    def sample_round_batch(self, rng: np.random.Generator) -> Any: ...

    def batch_loss(self, params: ParamVector, batch: Any) -> float: ...

    def train(
        self, params: ParamVector, batch: Any, eta: float, steps: int
    ) -> tuple[ParamVector, float]: ...


@dataclass
class TinynetObjective:
    """Classifier objective over a node's local shard."""

    arch: tinynet.Architecture
    data: NodeDataset
    batch_size: int

    def sample_round_batch(self, rng: np.random.Generator) -> tinynet.Batch:
        return sample_batch(self.data, self.batch_size, rng)

    def batch_loss(self, params: ParamVector, batch: tinynet.Batch) -> float:
        return tinynet.batch_loss(self.arch, params, batch)

    def train(self, params, batch, eta, steps):
        return tinynet.sgd_steps(
            self.arch, params, batch, eta, steps, return_first_loss=True
        )


@dataclass
class NodeState:
    """Everything one node carries between rounds."""

    node_id: int
    core: np.ndarray
    head_bank: list[np.ndarray]
    objective: Objective
    rng: np.random.Generator
    last_selected: int = 0
    selection_history: list[int] = field(default_factory=list)

    def params(self, slot: int = 0) -> ParamVector:
        return assemble(self.core, self.head_bank[slot])

    @property
    def total_len(self) -> int:
        return int(self.core.size + self.head_bank[0].size)


@dataclass(frozen=True)
class Message:
    """What one node puts on the wire each round."""

    sender: int
    core: np.ndarray
    head: np.ndarray
    cluster_id: int


@dataclass
class RoundRecord:
    """Per-round metrics emitted by the runner."""

    round_index: int
    phase: str  # "init", "round" or "final"
    algorithm: str
    losses: list[float]
    selected: list[int]
    bytes_sent: int
    bytes_cumulative: int = 0
    topology_connected: bool | None = None
    per_cluster_acc: list[float] | None = None

    def to_json(self) -> dict:
        return {
            "round": self.round_index,
            "phase": self.phase,
            "algorithm": self.algorithm,
            "losses": self.losses,
            "selected": self.selected,
            "bytes_sent": self.bytes_sent,
            "bytes_cumulative": self.bytes_cumulative,
            "topology_connected": self.topology_connected,
            "per_cluster_acc": self.per_cluster_acc,
        }


def _senders(topology: Topology, node_id: int) -> list[int]:
    """The averaging set: the node itself plus its neighbors, sorted."""
    return sorted((node_id, *neighbors(topology, node_id)))


def _mean(rows: list[np.ndarray]) -> np.ndarray:
    return np.stack(rows).mean(axis=0)


def _round_bytes(states: list[NodeState], topology: Topology, algorithm: str) -> int:
    total = states[0].total_len
    core = int(states[0].core.size)
    return fairness.comm_volume(algorithm, topology.n, topology.r, total, core)


def facade_round(
    states: list[NodeState], topology: Topology, round_index: int, config: ProtocolConfig
) -> tuple[list[NodeState], RoundRecord]:
    """One round of clustered training with head selection.

    During warm-up rounds every head slot is kept identical: heads are
    aggregated over all senders regardless of the reported slot, slot 0 is
    forced, and the trained head is copied into the whole bank.
    """
    warm = round_index < config.warmup_rounds
    prev = states
    new_states: list[NodeState] = []
    losses: list[float] = []
    selected: list[int] = []
    for st in states:
        senders = _senders(topology, st.node_id)
        core = _mean([prev[s].core for s in senders])
        if warm:
            shared = _mean(
                [prev[s].head_bank[prev[s].last_selected] for s in senders]
            )
            bank = [shared.copy() for _ in range(config.k)]
            pick = 0
            batch = st.objective.sample_round_batch(st.rng)
        else:
            bank = []
            for j in range(config.k):
                rows = [
                    prev[s].head_bank[j]
                    for s in senders
                    if s == st.node_id or prev[s].last_selected == j
                ]
                bank.append(_mean(rows))
            batch = st.objective.sample_round_batch(st.rng)
            slot_losses = [
                st.objective.batch_loss(assemble(core, h), batch) for h in bank
            ]
            pick = int(np.argmin(slot_losses))  # ties go to the lowest index
        trained, loss0 = st.objective.train(
            assemble(core, bank[pick]), batch, config.eta, config.local_steps
        )
        if warm:
            bank = [trained.head.copy() for _ in range(config.k)]
        else:
            bank[pick] = trained.head.copy()
        new_states.append(
            NodeState(
                st.node_id,
                trained.core.copy(),
                bank,
                st.objective,
                st.rng,
                last_selected=pick,
                selection_history=st.selection_history + [pick],
            )
        )
        losses.append(loss0)
        selected.append(pick)
    record = RoundRecord(
        round_index,
        "round",
        "facade",
        losses,
        selected,
        _round_bytes(states, topology, "facade"),
    )
    return new_states, record


def el_round(
    states: list[NodeState], topology: Topology, round_index: int, config: ProtocolConfig
) -> tuple[list[NodeState], RoundRecord]:
    """One round of single-head averaging over a fresh random graph."""
    prev = states
    new_states: list[NodeState] = []
    losses: list[float] = []
    for st in states:
        senders = _senders(topology, st.node_id)
        theta = _mean(
            [
                np.concatenate([prev[s].core, prev[s].head_bank[0]])
                for s in senders
            ]
        )
        batch = st.objective.sample_round_batch(st.rng)
        trained, loss0 = st.objective.train(
            ParamVector(theta, st.core.size), batch, config.eta, config.local_steps
        )
        new_states.append(
            NodeState(
                st.node_id,
                trained.core.copy(),
                [trained.head.copy()],
                st.objective,
                st.rng,
                last_selected=0,
                selection_history=st.selection_history + [0],
            )
        )
        losses.append(loss0)
    record = RoundRecord(
        round_index,
        "round",
        "el",
        losses,
        [0] * len(states),
        _round_bytes(states, topology, "el"),
    )
    return new_states, record


def _local_training(
    states: list[NodeState], config: ProtocolConfig
) -> tuple[list[ParamVector], list[float]]:
    """Multi-step local SGD with a fresh batch per step (static-graph style)."""
    trained: list[ParamVector] = []
    first_losses: list[float] = []
    for st in states:
        p = st.params(0)
        first = 0.0
        for step in range(config.local_steps):
            batch = st.objective.sample_round_batch(st.rng)
            p, loss0 = st.objective.train(p, batch, config.eta, 1)
            if step == 0:
                first = loss0
        trained.append(p)
        first_losses.append(first)
    return trained, first_losses


def dpsgd_round(
    states: list[NodeState], topology: Topology, round_index: int, config: ProtocolConfig
) -> tuple[list[NodeState], RoundRecord]:
    """Train locally, then average full parameter vectors over the graph."""
    trained, losses = _local_training(states, config)
    new_states: list[NodeState] = []
    for st in states:
        senders = _senders(topology, st.node_id)
        theta = _mean([trained[s].values for s in senders])
        p = ParamVector(theta, st.core.size)
        new_states.append(
            NodeState(
                st.node_id,
                p.core.copy(),
                [p.head.copy()],
                st.objective,
                st.rng,
                last_selected=0,
                selection_history=st.selection_history + [0],
            )
        )
    record = RoundRecord(
        round_index,
        "round",
        "dpsgd",
        losses,
        [0] * len(states),
        _round_bytes(states, topology, "dpsgd"),
    )
    return new_states, record


def deprl_lite_round(
    states: list[NodeState], topology: Topology, round_index: int, config: ProtocolConfig
) -> tuple[list[NodeState], RoundRecord]:
    """Like dpsgd, but only cores are exchanged; heads never leave the node."""
    trained, losses = _local_training(states, config)
    new_states: list[NodeState] = []
    for st in states:
        senders = _senders(topology, st.node_id)
        core = _mean([trained[s].core for s in senders])
        new_states.append(
            NodeState(
                st.node_id,
                core,
                [trained[st.node_id].head.copy()],
                st.objective,
                st.rng,
                last_selected=0,
                selection_history=st.selection_history + [0],
            )
        )
    record = RoundRecord(
        round_index,
        "round",
        "deprl_lite",
        losses,
        [0] * len(states),
        _round_bytes(states, topology, "deprl_lite"),
    )
    return new_states, record


ROUND_FNS = {
    "facade": facade_round,
    "el": el_round,
    "dpsgd": dpsgd_round,
    "deprl_lite": deprl_lite_round,
}


def final_all_reduce(states: list[NodeState], config: ProtocolConfig) -> list[NodeState]:
    """Network-wide averaging after the last round.

    Cores are always averaged globally. For the clustered protocol each
    head slot is averaged over the nodes whose final selection was that
    slot; slots nobody selected stay as they are on each node. The
    heads-local protocol keeps its personalized heads untouched.
    """
    global_core = _mean([st.core for st in states])
    if config.algorithm == "facade":
        slot_means: dict[int, np.ndarray] = {}
        for j in range(config.k):
            chosen = [st.head_bank[j] for st in states if st.last_selected == j]
            if chosen:
                slot_means[j] = _mean(chosen)
        banks = [
            [
                slot_means[j].copy() if j in slot_means else st.head_bank[j].copy()
                for j in range(config.k)
            ]
            for st in states
        ]
    elif config.algorithm == "deprl_lite":
        banks = [[st.head_bank[0].copy()] for st in states]
    else:
        global_head = _mean([st.head_bank[0] for st in states])
        banks = [[global_head.copy()] for st in states]
    return [
        NodeState(
            st.node_id,
            global_core.copy(),
            bank,
            st.objective,
            st.rng,
            last_selected=st.last_selected,
            selection_history=list(st.selection_history),
        )
        for st, bank in zip(states, banks)
    ]


def init_states(
    config: ProtocolConfig,
    datasets: list[NodeDataset],
    arch: tinynet.Architecture,
) -> list[NodeState]:
    """Shared initialization: every node starts from the same parameters.

    Head slot j of the bank comes from its own seeded draw so the k
    candidates start distinct; slot 0 equals the single-head init so the
    k=1 bank matches the baselines exactly. All nodes report slot 0
    initially (their banks are identical, so the label is arbitrary).
    """
    base = tinynet.init_params(
        arch, np.random.SeedSequence([config.seed, INIT_TAG, 0])
    )
    heads = [base.head.copy()]
    for j in range(1, config.k):
        extra = tinynet.init_params(
            arch, np.random.SeedSequence([config.seed, INIT_TAG, j])
        )
        heads.append(extra.head.copy())
    states = []
    for i, data in enumerate(datasets):
        states.append(
            NodeState(
                i,
                base.core.copy(),
                [h.copy() for h in heads],
                TinynetObjective(arch, data, config.batch_size),
                np.random.default_rng(
                    np.random.SeedSequence([config.seed, NODE_TAG, i])
                ),
            )
        )
    return states


def run(
    config: ProtocolConfig,
    cluster_spec,
    datasets: list[NodeDataset],
    test_sets: dict[int, Any],
    arch: tinynet.Architecture,
) -> tuple[list[RoundRecord], list[NodeState]]:
    """Run a full experiment: init, T rounds, final all-reduce.

    Evaluation (per-cluster test accuracy) happens before the first round,
    after every ``eval_every``-th round, and after the all-reduce. Random
    graphs are redrawn per round for facade/el from a topology stream that
    depends only on the seed, so runs with different algorithms see the
    same graphs; dpsgd and deprl_lite use a static ring.

    Emitted records are labeled by the number of completed rounds (the
    init record is 0, the record after the first round is 1, ...); the
    post-all-reduce record shares the label ``rounds`` with the last
    round but carries phase "final".
    """
    if len(datasets) != cluster_spec.num_nodes:
        raise ValueError("one dataset per node required")
    states = init_states(config, datasets, arch)
    round_fn = ROUND_FNS[config.algorithm]
    static = None
    if config.algorithm in ("dpsgd", "deprl_lite"):
        static = gen_static_ring(cluster_spec.num_nodes, config.degree)

    def evaluate() -> list[float]:
        return fairness.per_cluster_accuracy(states, cluster_spec, test_sets, arch)

    records = [
        RoundRecord(0, "init", config.algorithm, [], [], 0, 0, None, evaluate())
    ]
    if config.rounds == 0:
        return records, states
    cumulative = 0
    for t in range(config.rounds):
        if static is not None:
            topo = static
        else:
            topo = gen_r_regular(
                cluster_spec.num_nodes,
                config.degree,
                np.random.SeedSequence([config.seed, TOPOLOGY_TAG, t]),
                round_index=t,
            )
        states, rec = round_fn(states, topo, t, config)
        rec.round_index = t + 1
        cumulative += rec.bytes_sent
        rec.bytes_cumulative = cumulative
        rec.topology_connected = is_connected(topo)
        if (t + 1) % config.eval_every == 0:
            rec.per_cluster_acc = evaluate()
        records.append(rec)
    states = final_all_reduce(states, config)
    records.append(
        RoundRecord(
            config.rounds, "final", config.algorithm, [], [], 0, cumulative, None, evaluate()
        )
    )
    return records, states
