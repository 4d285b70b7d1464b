"""Round orchestration, client participation, ledgers, and metrics.

One round of the prototype protocol: sampled clients train locally (plain
cross-entropy until they have received personalized prototypes, the combined
loss afterwards), run inference, pseudo-annotate, build multi-hop prototypes,
and upload.  The server trains its prototype generator on the uploads, fuses
a personalized set per participant, and broadcasts.  Every byte that crosses
the wire is recorded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from . import prototypes as pr
from . import server as sv
from .config import FederationConfig, config_echo
from .errors import ConfigRangeError, DegeneratePrototypeError, DivergedError
from .graph import MASK_NAMES, Graph, hop_balls, sparsify
from .partition import Partition, partition_graph

# heterogeneous assignment cycle: (kind, num_layers)
HETERO_SLOTS = (
    (bb.KIND_PROPAGATED, 2),
    (bb.KIND_PROPAGATED, 3),
    (bb.KIND_MESSAGE_PASSING, 2),
)


@dataclass
class ClientState:
    client_id: int
    graph: Graph
    backbone: bb.Backbone
    scorer: pr.AttentionScorer
    op: bb.GraphOperator
    ball_nodes: list = field(default_factory=list)
    ball_dists: list = field(default_factory=list)
    eff_labels: np.ndarray | None = None
    plans: list = field(default_factory=list)
    personalized: dict = field(default_factory=dict)

    @property
    def labeled_idx(self) -> np.ndarray:
        return np.where(self.graph.labeled_mask)[0]


@dataclass
class LedgerRow:
    round_index: int
    client_id: int
    bytes_up: int
    bytes_down: int


@dataclass
class MetricRow:
    round_index: int
    client_id: int
    split: str
    accuracy: float
    loss: float
    support: int


@dataclass
class RoundMetrics:
    round_index: int
    participants: list[int]
    rows: list[MetricRow]
    global_accuracy: float
    ledger: list[LedgerRow]


@dataclass
class FederationState:
    cfg: FederationConfig
    partition: Partition
    clients: list[ClientState]
    hops: tuple[int, ...]
    gpg: sv.GpgState | None
    fedavg_weights: dict | None
    round_metrics: list[RoundMetrics] = field(default_factory=list)
    server_received: dict[int, int] = field(default_factory=dict)
    last_round_uploads: dict[int, list] = field(default_factory=dict)
    proto_dumps: list[tuple[str, bytes]] = field(default_factory=list)


def _client_rng(cfg: FederationConfig, client_id: int) -> np.random.Generator:
    return np.random.default_rng([cfg.init_seed, client_id])


def _backbone_slot(cfg: FederationConfig, client_id: int) -> tuple[str, int]:
    if cfg.heterogeneous:
        return HETERO_SLOTS[client_id % len(HETERO_SLOTS)]
    return cfg.backbone, cfg.num_layers


def effective_hops(cfg: FederationConfig) -> tuple[int, ...]:
    if cfg.method == "fedproto-naive":
        return (0,)
    if cfg.heterogeneous:
        min_layers = min(layers for _, layers in HETERO_SLOTS)
    else:
        min_layers = cfg.num_layers
    h = min_layers if cfg.max_hops < 0 else min(cfg.max_hops, min_layers)
    return tuple(range(h + 1))


def setup_experiment(cfg: FederationConfig, graph: Graph) -> FederationState:
    """Partition the graph, initialize client and server state."""
    if cfg.edge_keep_ratio < 1.0:
        graph = sparsify(graph, "edge", cfg.edge_keep_ratio, [cfg.partition_seed, 101])
    if cfg.feature_keep_ratio < 1.0:
        graph = sparsify(graph, "feature", cfg.feature_keep_ratio, [cfg.partition_seed, 102])
    if cfg.label_keep_ratio < 1.0:
        graph = sparsify(graph, "label", cfg.label_keep_ratio, [cfg.partition_seed, 103])

    part = partition_graph(graph, cfg.partition, cfg.num_clients, cfg.partition_seed)
    hops = effective_hops(cfg)
    clients = []
    for cid, sub in enumerate(part.client_subgraphs):
        kind, layers = _backbone_slot(cfg, cid)
        rng = _client_rng(cfg, cid)
        model = bb.init_backbone(kind, layers, sub.num_features, cfg.hidden_dim,
                                 graph.num_classes, cfg.proto_dim, rng)
        scorer = pr.init_scorer(cfg.proto_dim, cfg.scorer_hidden_dim, rng)
        op = bb.make_operator(model, sub)
        ball_nodes, ball_dists = hop_balls(sub, max(hops))
        clients.append(ClientState(cid, sub, model, scorer, op,
                                   ball_nodes, ball_dists))
    gpg = None
    fedavg_weights = None
    if cfg.method == "fedpg" and not cfg.gpg_bypass:
        gpg = sv.init_gpg(graph.num_classes, len(hops), cfg.proto_dim,
                          np.random.default_rng([cfg.init_seed, 1 << 20]))
    if cfg.method == "fedavg":
        kind, layers = cfg.backbone, cfg.num_layers
        rng = np.random.default_rng([cfg.init_seed, 1 << 21])
        global_model = bb.init_backbone(kind, layers, graph.num_features,
                                        cfg.hidden_dim, graph.num_classes,
                                        cfg.proto_dim, rng)
        fedavg_weights = global_model.weights
    return FederationState(cfg, part, clients, hops, gpg, fedavg_weights)


def sample_participants(cfg: FederationConfig, round_index: int) -> list[int]:
    """Seeded sampling without replacement, ceil(ratio * N) clients."""
    count = int(np.ceil(cfg.participation_ratio * cfg.num_clients))
    rng = np.random.default_rng([cfg.sampling_seed, round_index])
    picked = rng.choice(cfg.num_clients, size=count, replace=False)
    return sorted(int(c) for c in picked)


def _evaluate(state: FederationState, round_index: int,
              participants: list[int], ledger: list[LedgerRow]) -> RoundMetrics:
    rows = []
    correct_total = 0
    test_total = 0
    for c in state.clients:
        _, logits, _ = bb.forward(c.backbone, c.op)
        logp = bb.log_softmax(logits)
        hard = logits.argmax(axis=1)
        for code, name in enumerate(MASK_NAMES):
            idx = np.where(c.graph.masks == code)[0]
            if len(idx) == 0:
                rows.append(MetricRow(round_index, c.client_id, name, 0.0, 0.0, 0))
                continue
            acc = float((hard[idx] == c.graph.labels[idx]).mean())
            loss = float(-logp[idx, c.graph.labels[idx]].mean())
            rows.append(MetricRow(round_index, c.client_id, name, acc, loss, len(idx)))
            if name == "test":
                correct_total += int((hard[idx] == c.graph.labels[idx]).sum())
                test_total += len(idx)
    global_acc = correct_total / test_total if test_total else 0.0
    return RoundMetrics(round_index, participants, rows, global_acc, ledger)


def _train_client(state: FederationState, c: ClientState, use_proto: bool) -> None:
    cfg = state.cfg
    mu = cfg.proto_loss_weight if use_proto else 0.0
    try:
        for _ in range(cfg.local_epochs):
            bb.train_epoch(c.backbone, c.op, c.graph.labels, c.labeled_idx,
                           cfg.client_lr, mu, c.scorer, c.plans, c.personalized,
                           cfg.literal_normalization)
    except DivergedError as exc:
        raise DivergedError(f"client {c.client_id}: {exc}") from exc


def _annotate(state: FederationState, c: ClientState) -> np.ndarray:
    """Post-training inference + pseudo-annotation; refreshes the client's
    effective labels and neighborhood plans, returns projected embeddings."""
    cfg = state.cfg
    emb, logits, _ = bb.forward(c.backbone, c.op)
    soft = bb.softmax(logits)
    eff = pr.pseudo_annotate(soft, c.graph.labels, c.graph.labeled_mask,
                             cfg.confidence_threshold)
    c.eff_labels = eff
    c.plans = pr.build_cell_plans(c.ball_nodes, c.ball_dists, eff, state.hops)
    return emb @ c.backbone.weights["w_proj"]


def run_round_fedpg(state: FederationState, round_index: int) -> RoundMetrics:
    cfg = state.cfg
    participants = sample_participants(cfg, round_index)
    ledger = []
    uploads: dict[int, list[pr.Prototype]] = {}
    for cid in participants:
        c = state.clients[cid]
        _train_client(state, c, use_proto=bool(c.personalized))
        zp = _annotate(state, c)
        protos = pr.prototypes_from_plans(zp, c.plans, c.scorer,
                                          cfg.literal_normalization)
        if cfg.noise_dim_fraction > 0.0 and cfg.noise_sigma_rel > 0.0:
            protos = pr.add_prototype_noise(
                protos, cfg.noise_dim_fraction, cfg.noise_sigma_rel,
                np.random.default_rng([cfg.noise_seed, round_index, cid]))
        uploads[cid] = protos
    state.last_round_uploads = uploads
    up_bytes = {cid: len(pr.encode_prototypes(uploads[cid])) for cid in uploads}
    state.server_received[round_index] = sum(up_bytes.values())

    if any(uploads.values()):
        try:
            if state.gpg is not None:
                sv.train_gpg(state.gpg, uploads, cfg.server_epochs, cfg.server_lr,
                             cfg.hop_sample_ratio, cfg.margin_cap,
                             np.random.default_rng([cfg.sampling_seed, round_index, 1]))
                universal = state.gpg.universal
            else:
                # generator bypass: universal prototypes are the naive aggregate
                universal = np.zeros((state.clients[0].graph.num_classes,
                                      len(state.hops), cfg.proto_dim))
                for p in sv.naive_global_aggregate(uploads):
                    universal[p.class_id, p.hop] = p.vector
            fused = sv.personalized_fusion(universal, uploads,
                                           cfg.similarity_threshold,
                                           cfg.fusion_weight)
        except DegeneratePrototypeError as exc:
            raise DegeneratePrototypeError(f"round {round_index}: {exc}") from exc
        if cfg.dump_prototypes:
            grid = [pr.Prototype(c_, h, universal[c_, h], 1)
                    for c_ in range(universal.shape[0])
                    for h in range(universal.shape[1])]
            state.proto_dumps.append((f"round_{round_index:04d}_universal.bin",
                                      pr.encode_prototypes(grid)))
        for cid in participants:
            c = state.clients[cid]
            broadcast = fused[cid]
            c.personalized = {(p.class_id, p.hop): p.vector for p in broadcast}
            blob = pr.encode_prototypes(broadcast)
            if cfg.dump_prototypes:
                state.proto_dumps.append(
                    (f"round_{round_index:04d}_client_{cid:03d}.bin", blob))
            ledger.append(LedgerRow(round_index, cid, up_bytes[cid], len(blob)))
    else:
        for cid in participants:
            ledger.append(LedgerRow(round_index, cid, up_bytes[cid], 0))
    for cid in range(cfg.num_clients):
        if cid not in participants:
            ledger.append(LedgerRow(round_index, cid, 0, 0))
    ledger.sort(key=lambda r: r.client_id)
    return _evaluate(state, round_index, participants, ledger)


def run_round_fedproto_naive(state: FederationState, round_index: int) -> RoundMetrics:
    cfg = state.cfg
    participants = sample_participants(cfg, round_index)
    ledger = []
    uploads: dict[int, list[pr.Prototype]] = {}
    for cid in participants:
        c = state.clients[cid]
        _train_client(state, c, use_proto=bool(c.personalized))
        zp = _annotate(state, c)
        uploads[cid] = pr.naive_local_prototypes(zp, c.eff_labels)
    state.last_round_uploads = uploads
    up_bytes = {cid: len(pr.encode_prototypes(uploads[cid])) for cid in uploads}
    state.server_received[round_index] = sum(up_bytes.values())

    aggregate = sv.naive_global_aggregate(uploads) if any(uploads.values()) else []
    broadcast = {(p.class_id, p.hop): p.vector for p in aggregate}
    down = len(pr.encode_prototypes(aggregate))
    for cid in participants:
        state.clients[cid].personalized = dict(broadcast)
        ledger.append(LedgerRow(round_index, cid, up_bytes[cid], down))
    for cid in range(cfg.num_clients):
        if cid not in participants:
            ledger.append(LedgerRow(round_index, cid, 0, 0))
    ledger.sort(key=lambda r: r.client_id)
    return _evaluate(state, round_index, participants, ledger)


def run_round_fedavg(state: FederationState, round_index: int) -> RoundMetrics:
    cfg = state.cfg
    participants = sample_participants(cfg, round_index)
    ledger = []
    entries = []
    down_sizes = {}
    for cid in participants:
        c = state.clients[cid]
        if c.backbone.kind != cfg.backbone or c.backbone.num_layers != cfg.num_layers:
            raise ConfigRangeError("fedavg requires identical client architectures")
        # receive the current global model
        c.backbone.weights = {k: v.copy() for k, v in state.fedavg_weights.items()}
        down_sizes[cid] = len(bb.serialize_weights(c.backbone))
        _train_client(state, c, use_proto=False)
        blob = bb.serialize_weights(c.backbone)
        support = max(1, int(c.graph.labeled_mask.sum()))
        entries.append(({k: v for k, v in c.backbone.weights.items()}, support))
        ledger.append(LedgerRow(round_index, cid, len(blob), down_sizes[cid]))
    state.server_received[round_index] = sum(r.bytes_up for r in ledger)
    state.fedavg_weights = bb.average_weights(entries)
    for cid in range(cfg.num_clients):
        if cid not in participants:
            ledger.append(LedgerRow(round_index, cid, 0, 0))
    ledger.sort(key=lambda r: r.client_id)
    return _evaluate(state, round_index, participants, ledger)


_ROUND_FNS = {
    "fedpg": run_round_fedpg,
    "fedproto-naive": run_round_fedproto_naive,
    "fedavg": run_round_fedavg,
}


def run_round(state: FederationState, round_index: int) -> RoundMetrics:
    metrics = _ROUND_FNS[state.cfg.method](state, round_index)
    state.round_metrics.append(metrics)
    return metrics


def run_rounds(state: FederationState) -> list[RoundMetrics]:
    for t in range(1, state.cfg.rounds + 1):
        run_round(state, t)
    return state.round_metrics


# -- output files ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(x, ".17g")


def metrics_csv(round_metrics) -> str:
    lines = ["round,client_id,split,accuracy,loss,support"]
    for rm in round_metrics:
        for r in rm.rows:
            lines.append(f"{r.round_index},{r.client_id},{r.split},"
                         f"{_fmt(r.accuracy)},{_fmt(r.loss)},{r.support}")
    return "\n".join(lines) + "\n"


def ledger_csv(round_metrics) -> str:
    lines = ["round,client_id,bytes_up,bytes_down"]
    for rm in round_metrics:
        for r in rm.ledger:
            lines.append(f"{r.round_index},{r.client_id},{r.bytes_up},{r.bytes_down}")
    return "\n".join(lines) + "\n"


def _json_dumps_17g(obj, indent=0) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  "{k}": {_json_dumps_17g(v, indent + 2)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_dumps_17g(v, indent) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return format(obj, ".17g")
    if isinstance(obj, int):
        return str(obj)
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def summarize(state: FederationState, wall_clock: float) -> dict:
    per_round_global = [rm.global_accuracy for rm in state.round_metrics]
    best_idx = int(np.argmax(per_round_global)) if per_round_global else 0
    total_up = sum(r.bytes_up for rm in state.round_metrics for r in rm.ledger)
    total_down = sum(r.bytes_down for rm in state.round_metrics for r in rm.ledger)
    return {
        "method": state.cfg.method,
        "final_global_accuracy": per_round_global[-1] if per_round_global else 0.0,
        "best_global_accuracy": per_round_global[best_idx] if per_round_global else 0.0,
        "best_round": best_idx + 1 if per_round_global else 0,
        "total_bytes_up": total_up,
        "total_bytes_down": total_down,
        "wall_clock_seconds": wall_clock,
        "config": config_echo(state.cfg),
    }


def run_experiment(cfg: FederationConfig, graph_dir, out_dir) -> dict:
    """Partition, run all rounds, and write metrics.csv / ledger.csv /
    summary.json under ``out_dir``."""
    from pathlib import Path

    from .graph import load_graph

    start = time.perf_counter()
    graph = load_graph(graph_dir)
    state = setup_experiment(cfg, graph)
    run_rounds(state)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(state.round_metrics), encoding="utf-8")
    (out / "ledger.csv").write_text(ledger_csv(state.round_metrics), encoding="utf-8")
    summary = summarize(state, wall_clock=time.perf_counter() - start)
    (out / "summary.json").write_text(_json_dumps_17g(summary) + "\n", encoding="utf-8")
    if cfg.dump_prototypes:
        proto_dir = out / "protos"
        proto_dir.mkdir(exist_ok=True)
        for name, blob in state.proto_dumps:
            (proto_dir / name).write_bytes(blob)
    return summary
