"""Discrete-event simulation of online survivable VN embedding."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cnd import CndConfig
from .enhance import EnhancedVn, apply_recovery, enhance_vn, fip_enhance
from .multipath import DEFAULT_ETA, Embedding, embed_vn, survives_link_failure
from .netmodel import (
    SubstrateNetwork,
    VN_CPU_OPTIONS,
    VirtualNetwork,
    generate_vn_request,
    release,
    rng_stream,
    waxman_generate,
)
from .neurolp import SolverConfig

log = logging.getLogger(__name__)

STRATEGIES = ("CND", "FIP")

# event kind ranks break timestamp ties
DEPARTURE, NODE_FAILURE, LINK_FAILURE, ARRIVAL = 0, 1, 2, 3
KIND_NAMES = {DEPARTURE: "departure", NODE_FAILURE: "node_failure", LINK_FAILURE: "link_failure", ARRIVAL: "arrival"}

CSV_COLUMNS = (
    "time", "vn_id", "event", "outcome", "objective",
    "cpu_used", "bw_used", "revenue_cum", "accept_ratio", "util_cpu", "util_bw",
)


@dataclass
class SubstrateParams:
    nodes: int = 50
    links: int = 200
    bw_low: float = 50.0
    bw_high: float = 150.0
    waxman_alpha: float = 0.15
    waxman_beta: float = 0.2


@dataclass
class WorkloadParams:
    num_requests: int = 200
    arrival_rate: float = 0.1
    lifetime_low: float = 300.0
    lifetime_high: float = 700.0
    size_low: int = 2
    size_high: int = 8
    connectivity: float = 0.5
    cpu_set: Tuple[float, ...] = VN_CPU_OPTIONS
    bw_low: float = 1.0
    bw_high: float = 50.0


@dataclass
class EmbeddingParams:
    strategy: str = "CND"
    eta: int = DEFAULT_ETA
    alpha: float = 1.0
    candidate_cap: int = 0  # 0 keeps the default of twice the enhanced size


@dataclass
class FailureParams:
    node_failures: Tuple[Tuple[float, int], ...] = ()
    link_failures: Tuple[Tuple[float, int], ...] = ()


# Online defaults: a short flow and a small swarm per request.
def _sim_solver() -> SolverConfig:
    return SolverConfig(integrator="explicit-euler", step_size=1e-3, max_steps=10)


def _sim_swarm() -> CndConfig:
    return CndConfig(swarm_size=3, outer_rounds=3, stall_rounds=2)


@dataclass
class ScenarioConfig:
    substrate: SubstrateParams = field(default_factory=SubstrateParams)
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)
    solver: SolverConfig = field(default_factory=_sim_solver)
    swarm: CndConfig = field(default_factory=_sim_swarm)
    failures: FailureParams = field(default_factory=FailureParams)
    seed: int = 0

    def __post_init__(self):
        w = self.workload
        if w.arrival_rate <= 0:
            raise ValueError("arrival_rate must be positive")
        if not 0 < w.lifetime_low <= w.lifetime_high:
            raise ValueError("lifetime bounds must be positive and ordered")
        if not 1 <= w.size_low <= w.size_high:
            raise ValueError("size bounds must be positive and ordered")
        if w.num_requests < 0:
            raise ValueError("num_requests must be nonnegative")
        if self.embedding.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.embedding.eta < 2:
            raise ValueError("eta must be at least 2")

    def with_strategy(self, strategy: str) -> "ScenarioConfig":
        return replace(self, embedding=replace(self.embedding, strategy=strategy))

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(order=True)
class Event:
    time: float
    rank: int
    ident: int
    vn: Optional[VirtualNetwork] = field(default=None, compare=False)

    @property
    def kind(self) -> str:
        return KIND_NAMES[self.rank]


def build_substrate(config: ScenarioConfig) -> SubstrateNetwork:
    s = config.substrate
    return waxman_generate(s.nodes, s.links, bw_low=s.bw_low, bw_high=s.bw_high,
                           waxman_alpha=s.waxman_alpha, waxman_beta=s.waxman_beta, seed=config.seed)


def generate_requests(config: ScenarioConfig) -> List[VirtualNetwork]:
    """Poisson arrivals with uniform lifetimes; every request has its own seed."""
    w = config.workload
    arrivals = rng_stream(config.seed, "arrivals")
    seeds = rng_stream(config.seed, "vn-seeds")
    out, t = [], 0.0
    for vn_id in range(w.num_requests):
        t += arrivals.exponential(1.0 / w.arrival_rate)
        lifetime = arrivals.uniform(w.lifetime_low, w.lifetime_high)
        vn = generate_vn_request(w.size_low, w.size_high, w.connectivity, w.cpu_set, w.bw_low, w.bw_high,
                                 seed=int(seeds.integers(2 ** 62)), vn_id=vn_id)
        vn.arrival, vn.lifetime = float(t), float(lifetime)
        out.append(vn)
    return out


def events_for(requests: Sequence[VirtualNetwork], failures: Optional[FailureParams] = None) -> List[Event]:
    events = []
    for vn in requests:
        events.append(Event(vn.arrival, ARRIVAL, vn.vn_id, vn))
        events.append(Event(vn.arrival + vn.lifetime, DEPARTURE, vn.vn_id))
    if failures is not None:
        events += [Event(float(t), NODE_FAILURE, int(x)) for t, x in failures.node_failures]
        events += [Event(float(t), LINK_FAILURE, int(x)) for t, x in failures.link_failures]
    events.sort()
    return events


def generate_workload(config: ScenarioConfig) -> List[Event]:
    """Ordered arrival, departure and scheduled failure events."""
    return events_for(generate_requests(config), config.failures)


@dataclass
class DecisionRecord:
    time: float
    vn_id: int
    event: str
    outcome: str
    objective: float
    cpu_used: float
    bw_used: float
    revenue_cum: float
    accept_ratio: float
    util_cpu: float
    util_bw: float

    def row(self) -> List[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
        return out


@dataclass
class Metrics:
    time: List[float] = field(default_factory=list)
    revenue_cum: List[float] = field(default_factory=list)
    accept_ratio: List[float] = field(default_factory=list)
    util_cpu: List[float] = field(default_factory=list)
    util_bw: List[float] = field(default_factory=list)
    records: List[DecisionRecord] = field(default_factory=list)
    submitted: int = 0
    accepted: int = 0

    @property
    def util_mean(self) -> List[float]:
        return [(a + b) / 2 for a, b in zip(self.util_cpu, self.util_bw)]

    @property
    def final_revenue(self) -> float:
        return self.revenue_cum[-1] if self.revenue_cum else 0.0

    @property
    def final_accept_ratio(self) -> float:
        return self.accepted / self.submitted if self.submitted else 0.0

    def series(self) -> Dict[str, List[float]]:
        return {"time": self.time, "revenue_cum": self.revenue_cum, "accept_ratio": self.accept_ratio,
                "util_cpu": self.util_cpu, "util_bw": self.util_bw}


@dataclass
class LiveVn:
    vn: VirtualNetwork
    enhanced: EnhancedVn
    embedding: Embedding


@dataclass
class SimulationState:
    substrate: SubstrateNetwork
    live: Dict[int, LiveVn] = field(default_factory=dict)


@dataclass
class FailureOutcome:
    kind: str
    target: int
    ok: bool
    outcome: str
    affected: List[Tuple[int, str]] = field(default_factory=list)


def _check_plan(live: LiveVn, slot: int) -> Tuple[bool, str]:
    """Post-failure loads of a hosted working slot must fit the reserved envelope."""
    enh, emb = live.enhanced, live.embedding
    if slot == enh.n:
        return True, "backup idle"
    _, c, b = apply_recovery(enh, slot + 1)
    if c[slot] != 0:
        return False, "failed slot still loaded"
    if np.any(c > enh.c_e):
        return False, "cpu exceeds envelope"
    for j in np.nonzero(c)[0]:
        if emb.entry.node_cpu.get(int(emb.node_map[j]), -1.0) < c[j]:
            return False, f"slot {j} cpu not reserved"
    iu, ju = np.nonzero(np.triu(b, 1))
    for i, j in zip(iu.tolist(), ju.tolist()):
        if b[i, j] > enh.b_e[i, j] or (i, j) not in emb.link_paths:
            return False, f"link {i}-{j} not covered"
        if slot in (i, j):
            return False, f"link {i}-{j} touches the failed slot"
    return True, "recovered"


def inject_failure(state: SimulationState, event: Event) -> FailureOutcome:
    """Recovery check for a single failure; the state is not modified.

    A node failure executes the stored plan of every VN with a slot on that
    node. A link failure checks multipath survivability of every live VN.
    """
    if event.rank == NODE_FAILURE:
        node = event.ident
        affected, ok = [], True
        for vn_id in sorted(state.live):
            live = state.live[vn_id]
            hits = np.nonzero(live.embedding.node_map == node)[0]
            for slot in hits.tolist():
                good, why = _check_plan(live, slot)
                affected.append((vn_id, why))
                ok &= good
        if not affected:
            return FailureOutcome("node", node, True, "noop")
        return FailureOutcome("node", node, ok, "recovered" if ok else "violation", affected)
    if event.rank == LINK_FAILURE:
        link = event.ident
        affected, ok = [], True
        for vn_id in sorted(state.live):
            emb = state.live[vn_id].embedding
            if any(link in ps.all_links() for ps in emb.link_paths.values()):
                good = survives_link_failure(emb, link)
                affected.append((vn_id, "survived" if good else "violation"))
                ok &= good
        if not affected:
            return FailureOutcome("link", link, True, "noop")
        return FailureOutcome("link", link, ok, "survived" if ok else "violation", affected)
    raise ValueError(f"not a failure event: {event.kind}")


def node_failure_sweep(state: SimulationState) -> List[FailureOutcome]:
    nodes = sorted({int(k) for lv in state.live.values() for k in lv.embedding.node_map})
    return [inject_failure(state, Event(0.0, NODE_FAILURE, k)) for k in nodes]


def link_failure_sweep(state: SimulationState) -> List[FailureOutcome]:
    return [inject_failure(state, Event(0.0, LINK_FAILURE, e)) for e in range(state.substrate.num_links)]


def _enhance(vn: VirtualNetwork, config: ScenarioConfig, swarm_seed: int) -> EnhancedVn:
    emb = config.embedding
    if emb.strategy == "FIP":
        return fip_enhance(vn, emb.alpha)
    return enhance_vn(vn, emb.alpha, config.solver, replace(config.swarm, seed=swarm_seed))


@dataclass
class ScenarioResult:
    metrics: Metrics
    state: SimulationState
    failures: List[FailureOutcome] = field(default_factory=list)

    def write_csv(self, path) -> None:
        write_decision_csv(self.metrics.records, path)


def run_scenario(
    config: ScenarioConfig,
    substrate: Optional[SubstrateNetwork] = None,
    events: Optional[List[Event]] = None,
    until: Optional[float] = None,
) -> ScenarioResult:
    """Process events in order; rejections and failures are recorded outcomes.

    ``substrate`` and ``events`` default to the ones derived from the config
    seed; a given substrate is copied, never mutated. Events after ``until``
    are not processed.
    """
    substrate = build_substrate(config) if substrate is None else substrate.fresh()
    events = generate_workload(config) if events is None else events
    state = SimulationState(substrate)
    metrics = Metrics()
    outcomes: List[FailureOutcome] = []
    total_cpu = math.fsum(substrate.cpu)
    total_bw = math.fsum(substrate.bw)
    revenue = 0.0
    eta = config.embedding.eta
    cap = config.embedding.candidate_cap or None
    for ev in events:
        if until is not None and ev.time > until:
            break
        objective = math.nan
        if ev.rank == ARRIVAL:
            vn = ev.vn
            metrics.submitted += 1
            swarm_seed = config.seed * 1_000_003 + vn.vn_id
            enhanced = _enhance(vn, config, swarm_seed)
            emb = embed_vn(enhanced, substrate, eta, config.solver, replace(config.swarm, seed=swarm_seed), cap)
            if emb is None:
                outcome = "reject"
            else:
                outcome = "accept"
                objective = emb.objective
                metrics.accepted += 1
                revenue += vn.revenue()
                state.live[vn.vn_id] = LiveVn(vn, enhanced, emb)
        elif ev.rank == DEPARTURE:
            live = state.live.pop(ev.ident, None)
            if live is None:
                outcome = "noop"
            else:
                release(substrate, live.embedding.entry)
                outcome = "release"
        else:
            fo = inject_failure(state, ev)
            outcomes.append(fo)
            outcome = fo.outcome
            if not fo.ok:
                log.error("failure %s %d not recoverable: %s", fo.kind, fo.target, fo.affected)
        cpu_used, bw_used = substrate.used_cpu(), substrate.used_bw()
        ratio = metrics.accepted / metrics.submitted if metrics.submitted else 0.0
        rec = DecisionRecord(ev.time, ev.ident, ev.kind, outcome, objective, cpu_used, bw_used,
                             revenue, ratio, cpu_used / total_cpu, bw_used / total_bw)
        metrics.records.append(rec)
        metrics.time.append(rec.time)
        metrics.revenue_cum.append(revenue)
        metrics.accept_ratio.append(ratio)
        metrics.util_cpu.append(rec.util_cpu)
        metrics.util_bw.append(rec.util_bw)
    return ScenarioResult(metrics, state, outcomes)


def compute_metrics(records: Sequence[DecisionRecord], substrate: SubstrateNetwork) -> Metrics:
    """Rebuild the metric series from a decision log and the substrate capacities."""
    total_cpu = math.fsum(substrate.cpu)
    total_bw = math.fsum(substrate.bw)
    m = Metrics(records=list(records))
    for rec in records:
        if rec.event == "arrival":
            m.submitted += 1
            m.accepted += rec.outcome == "accept"
        m.time.append(rec.time)
        m.revenue_cum.append(rec.revenue_cum)
        m.accept_ratio.append(m.accepted / m.submitted if m.submitted else 0.0)
        m.util_cpu.append(rec.cpu_used / total_cpu)
        m.util_bw.append(rec.bw_used / total_bw)
    return m


def write_decision_csv(records: Sequence[DecisionRecord], path, strategy: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(decision_csv_text(records, strategy))


def decision_csv_text(records: Sequence[DecisionRecord], strategy: Optional[str] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((["strategy"] if strategy else []) + list(CSV_COLUMNS))
    for rec in records:
        w.writerow(([strategy] if strategy else []) + rec.row())
    return buf.getvalue()


def read_decision_csv(path) -> List[DecisionRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for f in fields(DecisionRecord):
                v = row[f.name]
                kw[f.name] = int(v) if f.name == "vn_id" else v if f.name in ("event", "outcome") else float(v)
            out.append(DecisionRecord(**kw))
    return out


def compare_strategies(config: ScenarioConfig, csv_path=None) -> Dict[str, Metrics]:
    """Run both strategies on one substrate and one workload."""
    substrate = build_substrate(config)
    events = generate_workload(config)
    results = {}
    for strategy in STRATEGIES:
        results[strategy] = run_scenario(config.with_strategy(strategy), substrate, events).metrics
    if csv_path is not None:
        write_paired_csv(results, csv_path)
    return results


def write_paired_csv(results: Dict[str, Metrics], path) -> None:
    with open(path, "w", newline="") as fh:
        for n, strategy in enumerate(STRATEGIES):
            text = decision_csv_text(results[strategy].records, strategy)
            fh.write(text if n == 0 else text.split("\n", 1)[1])
