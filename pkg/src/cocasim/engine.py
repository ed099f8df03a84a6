"""Round-based orchestration of clients and the server.

Every round each client sends a CacheRequest, receives a CacheAllocation,
runs ``frames_per_round`` frames locally and sends an UpdateUpload. Clients
may run on worker threads inside a round; the server applies uploads in
ascending client order, so results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import lookup, server as srv, traces
from .client import (ClientConfig, ClientState, LocalCache, UploadPayload, finalize_round,
                     process_block)
from .config import Scenario, validate
from .costs import CostProfile, RunMetrics, calibrate_default_costs
from .workload import (GroundTruth, LabelStream, apply_drift, emit_samples, make_distribution)

log = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1


@dataclass
class CacheRequest:
    client_id: int
    tau: np.ndarray
    hit_ratio: np.ndarray
    saved_time: np.ndarray
    budget: int


@dataclass
class CacheAllocation:
    client_id: int
    matrix: np.ndarray
    entries: np.ndarray            # payload: global entries for the client's layers
    policy: str


@dataclass
class UpdateUpload:
    payload: UploadPayload


@dataclass
class World:
    truth: GroundTruth
    drift_rng: np.random.Generator
    cost: CostProfile


class Server:
    def __init__(self, table: srv.GlobalCacheTable, scenario: Scenario, profile, fixed_layers):
        self.table = table
        self.scenario = scenario
        self.profile = profile
        self.fixed_layers = list(fixed_layers)
        self.messages: Dict[str, int] = {"CacheRequest": 0, "CacheAllocation": 0, "UpdateUpload": 0}
        self._latest_ratio: Dict[int, np.ndarray] = {}
        self.budget = scenario.budget_bytes or scenario.capacity * max(len(self.fixed_layers), 1) * table.entry_bytes

    def allocate(self, req: CacheRequest, policy: str, replacement=None) -> CacheAllocation:
        s = self.scenario
        self.messages["CacheRequest"] += 1
        t = self.table
        if policy == "ACA" and s.dca:
            ratio = req.hit_ratio
            if s.pool_hit_stats and self._latest_ratio:
                ratio = srv.pooled_hit_ratio([self._latest_ratio[k] for k in sorted(self._latest_ratio)])
            alloc = srv.aca_allocate(t.freq, req.tau, ratio, req.saved_time, req.budget,
                                     s.frames_per_round, t.entry_bytes, t.present,
                                     s.score_decay, s.coverage_target)
            matrix = alloc.matrix
        elif policy in ("ACA", "FixedAll"):
            matrix = srv.baseline_allocate("FixedAll", t.n_classes, t.n_layers, self.fixed_layers,
                                           present=t.present)
        elif policy == "EdgeOnly":
            matrix = srv.baseline_allocate("EdgeOnly", t.n_classes, t.n_layers)
        else:
            replacement.present = t.present.copy()
            matrix = replacement.allocation()
        entries = t.entries.copy()
        self.messages["CacheAllocation"] += 1
        return CacheAllocation(req.client_id, matrix, entries, policy)

    def receive(self, upload: UpdateUpload):
        self.messages["UpdateUpload"] += 1
        p = upload.payload
        self._latest_ratio[p.client_id] = p.hit_ratio.copy()
        srv.gcu_apply(self.table, p, self.scenario.gamma, update_entries=self.scenario.gcu)


class SimClient:
    def __init__(self, client_id, scenario: Scenario, world: World, seq: np.random.SeedSequence,
                 hit_prior, fixed_layers, replay: Optional[traces.Trace] = None):
        s = scenario
        dist_ss, label_ss, noise_ss, policy_ss = seq.spawn(4)
        self.client_id = client_id
        self.policy = s.policy_for(client_id)
        self.dist = make_distribution(s.classes, s.distribution, s.rho, s.p, np.random.default_rng(dist_ss))
        self.labels = LabelStream(self.dist, s.batch_len, np.random.default_rng(label_ss))
        self.noise_rng = np.random.default_rng(noise_ss)
        cfg = ClientConfig(s.theta, s.hit_margin, s.miss_margin, s.alpha, s.beta, s.temperature,
                           s.ema, s.label_oracle)
        self.state = ClientState(client_id, s.classes, s.layers, s.vector_dim, world.cost, cfg, hit_prior)
        self.replacement = None
        if self.policy in ("LRU", "FIFO", "RAND"):
            self.replacement = srv.ReplacementCache(self.policy, s.capacity, s.classes, s.layers,
                                                    fixed_layers, np.random.default_rng(policy_ss))
        self.replay = replay
        self._replay_pos = 0
        self.frames_done = 0

    def next_frames(self, n, truth: GroundTruth):
        if self.replay is not None:
            lo, hi = self._replay_pos, self._replay_pos + n
            if hi > len(self.replay):
                raise ValueError(f"trace for client {self.client_id} too short")
            self._replay_pos = hi
            labels = self.replay.true_label[lo:hi].astype(np.int64)
            if self.replay.vectors is not None:
                return labels, self.replay.vectors[lo:hi]
            return labels, emit_samples(truth, labels, self.noise_rng)
        labels = self.labels.take(n)
        return labels, emit_samples(truth, labels, self.noise_rng)

    def request(self, budget) -> CacheRequest:
        st = self.state
        return CacheRequest(self.client_id, st.tau.copy(), st.hit_ratio.copy(), st.saved_time.copy(), budget)


@dataclass
class RoundRecord:
    round: int
    client_id: int
    policy: str
    metrics: RunMetrics
    label_digest: str


@dataclass
class ScenarioResult:
    scenario: Scenario
    records: List[RoundRecord]
    total: RunMetrics
    server: Server
    world: World
    events: List[dict] = field(default_factory=list)
    trace: Optional[traces.Trace] = None

    @property
    def average_latency_ms(self):
        return self.total.average_latency_ms

    @property
    def overall_accuracy(self):
        return self.total.overall_accuracy


def build(scenario: Scenario):
    """Set up world, server and clients deterministically from the seed."""
    s = validate(scenario)
    master = np.random.SeedSequence(s.seed)
    world_ss, drift_ss, calib_ss, probe_ss, clients_ss = master.spawn(5)
    cost = calibrate_default_costs(s.layers, s.reference_classes, s.total_compute,
                                   s.lookup_fraction, s.fixed_share)
    truth = GroundTruth.generate(s.classes, s.layers, s.vector_dim, np.random.default_rng(world_ss),
                                 (s.separation_first, s.separation_last), (s.noise_first, s.noise_last),
                                 s.drift, s.difficulty)
    world = World(truth, np.random.default_rng(drift_ss), cost)

    calib_rng = np.random.default_rng(calib_ss)
    calib_labels = np.repeat(np.arange(s.classes), s.calibration_per_class)
    table = srv.init_global_cache(emit_samples(truth, calib_labels, calib_rng), calib_labels, s.classes)

    probe_rng = np.random.default_rng(probe_ss)
    probe_labels = probe_rng.integers(0, s.classes, s.probe_frames)
    probe = emit_samples(truth, probe_labels, probe_rng)
    profile = srv.profile_hit_ratio(table, probe, s.theta, s.alpha) if np.isfinite(s.theta) \
        else np.append(np.zeros(s.layers), 1.0)
    fixed = s.fixed_layer_list() or srv.select_fixed_layers(profile, cost.saved_time(), s.fixed_layer_count)
    server = Server(table, s, profile, fixed)

    replay = traces.read_trace(s.trace_in) if s.trace_in else None
    prior = profile if s.hit_prior == "profile" else None
    clients = [SimClient(k, s, world, ss, prior, fixed,
                         replay.for_client(k) if replay is not None else None)
               for k, ss in enumerate(clients_ss.spawn(s.clients))]
    return world, server, clients


def _client_round(client: SimClient, alloc: CacheAllocation, world: World, truth: GroundTruth,
                  frames: int, keep_events: bool):
    labels, vectors = client.next_frames(frames, truth)
    cache = LocalCache(alloc.entries, alloc.matrix, world.cost)
    result = process_block(client.state, cache, vectors, labels, truth, client.replacement,
                           keep_outcomes=keep_events)
    return labels, vectors, result


def run_round(scenario: Scenario, round_index, clients: List[SimClient], server: Server, world: World,
              pool: Optional[ThreadPoolExecutor] = None, keep_events=False, keep_trace=False):
    s = scenario
    truth = world.truth
    allocations = [server.allocate(c.request(server.budget), c.policy, c.replacement) for c in clients]
    jobs = [(c, a, world, truth, s.frames_per_round, keep_events) for c, a in zip(clients, allocations)]
    if pool is not None:
        results = list(pool.map(lambda j: _client_round(*j), jobs))
    else:
        results = [_client_round(*j) for j in jobs]

    records, events, trace_parts = [], [], []
    for c, alloc, (labels, vectors, res) in zip(clients, allocations, results):
        m = res.metrics
        transfer_kb = int(alloc.matrix.sum()) * server.table.entry_bytes / 1024.0
        m.total_latency_ms += transfer_kb * s.transfer_ms_per_kb
        digest = hashlib.sha256(np.ascontiguousarray(labels, dtype="<i8").tobytes()).hexdigest()[:16]
        records.append(RoundRecord(round_index, c.client_id, c.policy, m, digest))
        start = c.frames_done
        if keep_events:
            for k, out in enumerate(res.outcomes):
                events.append({"frame_index": start + k, "client_id": c.client_id,
                               "true_label": out.true_label, "predicted": out.predicted,
                               "exit_layer": out.exit_slot + 1, "latency_ms": out.latency,
                               "hit": int(out.hit), "collected": out.collected})
        if keep_trace:
            n = len(labels)
            trace_parts.append(traces.Trace(np.arange(start, start + n, dtype=np.int64),
                                            np.full(n, c.client_id, dtype=np.int32),
                                            labels.astype(np.int32), np.asarray(vectors)))
        c.frames_done += len(labels)

    for c in clients:
        server.receive(UpdateUpload(finalize_round(c.state)))
    if truth.drift_rate > 0:
        world.truth = apply_drift(truth, world.drift_rng)
    return records, events, trace_parts


def run_scenario(scenario: Scenario, out_dir=None, keep_events=None) -> ScenarioResult:
    s = validate(scenario)
    world, server, clients = build(s)
    keep_events = s.event_log if keep_events is None else keep_events
    keep_trace = s.export_trace
    log.info("scenario seed=%d clients=%d rounds=%d backend=%s", s.seed, s.clients, s.rounds, lookup.BACKEND)
    records, events, parts = [], [], []
    pool = ThreadPoolExecutor(max_workers=s.workers) if s.workers > 1 else None
    try:
        for r in range(s.rounds):
            rec, ev, tp = run_round(s, r, clients, server, world, pool, keep_events, keep_trace)
            records += rec
            events += ev
            parts += tp
    finally:
        if pool is not None:
            pool.shutdown()
    total = RunMetrics(exit_counts=np.zeros(s.layers + 1, dtype=np.int64))
    for rec in records:
        total = total.merge(rec.metrics)
    result = ScenarioResult(s, records, total, server, world, events,
                            traces.Trace.concat(parts) if keep_trace else None)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


METRIC_COLUMNS = ["frames", "average_latency_ms", "overall_accuracy", "hit_ratio", "hit_accuracy",
                  "cache_bytes_used", "collected_hit", "collected_miss"]


def metric_values(m: RunMetrics):
    return [m.frames, m.average_latency_ms, m.overall_accuracy, m.hit_ratio, m.hit_accuracy,
            m.cache_bytes_used, m.collected_hit, m.collected_miss]


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metrics_header(n_layers):
    return (["round", "client_id", "policy"] + METRIC_COLUMNS
            + [f"exit_ratio_{j + 1}" for j in range(n_layers + 1)] + ["label_digest"])


def record_row(rec: RoundRecord):
    m = rec.metrics
    return ([rec.round, rec.client_id, rec.policy] + metric_values(m)
            + list(m.per_layer_hit_ratio) + [rec.label_digest])


def write_metrics_csv(records, n_layers, path, prefix_cols=(), prefix_vals=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(prefix_cols) + metrics_header(n_layers))
        for k, rec in enumerate(records):
            pre = prefix_vals[k] if prefix_vals is not None else []
            w.writerow([fmt(v) for v in list(pre) + record_row(rec)])


def summary_dict(result: ScenarioResult):
    s = result.scenario
    t = result.total
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": s.to_dict(),
        "seed": s.seed,
        "rounds": s.rounds,
        "edge_latency_ms": result.world.cost.edge_latency,
        "fixed_layers": [j + 1 for j in result.server.fixed_layers],
        "budget_bytes": int(result.server.budget),
        "messages": dict(result.server.messages),
        "aggregate": {
            "frames": t.frames,
            "average_latency_ms": t.average_latency_ms,
            "overall_accuracy": t.overall_accuracy,
            "hit_ratio": t.hit_ratio,
            "hit_accuracy": t.hit_accuracy,
            "per_layer_hit_ratio": [float(x) for x in t.per_layer_hit_ratio],
        },
    }


def write_outputs(result: ScenarioResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    s = result.scenario
    write_metrics_csv(result.records, s.layers, out / "metrics.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if result.events:
        cols = ["frame_index", "client_id", "true_label", "predicted", "exit_layer", "latency_ms",
                "hit", "collected"]
        with open(out / "events.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for e in result.events:
                w.writerow([fmt(e[c]) for c in cols])
    if result.trace is not None:
        traces.write_binary(result.trace, out / "trace.bin")
        traces.write_csv(result.trace, out / "trace.csv")
    if s.export_snapshot:
        srv.export_snapshot(result.server.table, out / "cache_snapshot.bin")
