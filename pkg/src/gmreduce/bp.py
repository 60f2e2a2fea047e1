"""Belief propagation with Gaussian-mixture messages on small undirected
graphs, exact or with per-round mixture reduction.

Edges carry pairwise potentials N(x_i; x_j, 1/precision); nodes carry
one-dimensional mixture potentials.  A message is the edge kernel integrated
against the product of the source potential and the other incoming messages;
in closed form each pairwise product of components is a rescaled Gaussian and
the integration just adds 1/precision to every variance.  Message order
therefore multiplies round over round, which is what the optional reducer is
for.

The schedule is synchronous flooding: every message of round t is computed
from the round t-1 message set, and round 1 starts from the empty product
(unit initial messages).
"""

from dataclasses import dataclass, replace

import numpy as np

from .gaussian import LOG_2PI
from .mixture import GaussianMixture
from .reduce import ReductionConfig, reduce_with_restarts
from .costs import CostSpec

__all__ = [
    "FactorGraph",
    "MessageSet",
    "BpResult",
    "UnderflowError",
    "message_update",
    "message_update_raw",
    "belief_update",
    "run_bp",
    "default_bp_reducer",
    "demo_graph",
    "DEMO_EDGE_PRECISIONS",
]

# 4-node demo topology: (i, j, precision)
DEMO_EDGE_PRECISIONS = (
    (0, 3, 0.6),
    (0, 2, 0.4),
    (1, 0, 0.2),
    (2, 1, 0.01),
    (3, 2, 0.8),
)


class UnderflowError(ArithmeticError):
    """All product constants underflowed; the message cannot be normalized."""


@dataclass(frozen=True)
class FactorGraph:
    n_nodes: int
    edges: tuple  # (i, j, precision) with precision > 0
    potentials: tuple  # one 1-d GaussianMixture per node

    def __post_init__(self):
        edges = tuple((int(i), int(j), float(p)) for i, j, p in self.edges)
        seen = set()
        for i, j, p in edges:
            if not 0 <= i < self.n_nodes or not 0 <= j < self.n_nodes or i == j:
                raise ValueError(f"invalid edge ({i}, {j})")
            if not p > 0:
                raise ValueError(f"edge precision must be positive, got {p}")
            key = frozenset((i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add(key)
        potentials = tuple(self.potentials)
        if len(potentials) != self.n_nodes:
            raise ValueError("one potential per node required")
        for mix in potentials:
            if mix.dim != 1:
                raise ValueError("node potentials must be one-dimensional")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "potentials", potentials)

    def neighbors(self, i):
        out = []
        for a, b, _ in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def precision(self, i, j):
        for a, b, p in self.edges:
            if {a, b} == {i, j}:
                return p
        raise KeyError(f"no edge between {i} and {j}")

    def to_dict(self):
        return {
            "nodes": self.n_nodes,
            "edges": [{"i": i, "j": j, "precision": p} for i, j, p in self.edges],
            "potentials": [mix.to_dict() for mix in self.potentials],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            n_nodes=int(data["nodes"]),
            edges=tuple((e["i"], e["j"], e["precision"]) for e in data["edges"]),
            potentials=tuple(GaussianMixture.from_dict(p) for p in data["potentials"]),
        )


def demo_graph(seed=0):
    """The 4-node benchmark graph with fixed edge precisions and random
    2-component node potentials: weight ~ U(0,1), first mean ~ U(-4,0) with
    variance 1, second mean ~ U(0,4) with variance 1.5."""
    rng = np.random.default_rng(seed)
    potentials = []
    for _ in range(4):
        w = float(rng.uniform(0.0, 1.0))
        mu1 = float(rng.uniform(-4.0, 0.0))
        mu2 = float(rng.uniform(0.0, 4.0))
        potentials.append(
            GaussianMixture([w, 1.0 - w], [[mu1], [mu2]], [[[1.0]], [[1.5]]])
        )
    return FactorGraph(n_nodes=4, edges=DEMO_EDGE_PRECISIONS, potentials=tuple(potentials))


@dataclass
class MessageSet:
    """Directed messages keyed (source, destination), with the round they
    were produced in."""

    messages: dict
    iteration: int = 0

    @classmethod
    def empty(cls):
        return cls(messages={}, iteration=0)

    def get(self, src, dst):
        return self.messages.get((src, dst))


def _parts(mix):
    return mix.weights, mix.means[:, 0], mix.covs[:, 0, 0]


def _pair_product(w1, mu1, v1, w2, mu2, v2):
    """All pairwise products of two 1-d Gaussian mixtures, unnormalized.

    Each pair multiplies to C * N(mu3, v3) with C = N(mu_a; mu_b, v_a + v_b).
    """
    vs = v1[:, None] + v2[None, :]
    diff = mu1[:, None] - mu2[None, :]
    log_c = -0.5 * (LOG_2PI + np.log(vs) + diff * diff / vs)
    v3 = v1[:, None] * v2[None, :] / vs
    mu3 = v3 * (mu1[:, None] / v1[:, None] + mu2[None, :] / v2[None, :])
    w = (w1[:, None] * w2[None, :]) * np.exp(log_c)
    return w.ravel(), mu3.ravel(), v3.ravel()


def message_update_raw(graph, messages, src, dst):
    """Unnormalized updated message src -> dst as (weights, means, variances).

    Multiplies the source potential with the incoming messages (excluding the
    one from dst), then integrates against the edge kernel, which adds
    1/precision to every variance.
    """
    w, mu, v = _parts(graph.potentials[src])
    for k in graph.neighbors(src):
        if k == dst:
            continue
        incoming = messages.get(k, src)
        if incoming is None:
            continue
        w2, mu2, v2 = _parts(incoming)
        w, mu, v = _pair_product(w, mu, v, w2, mu2, v2)
    v = v + 1.0 / graph.precision(src, dst)
    return w, mu, v


def _to_mixture(w, mu, v):
    total = w.sum()
    if not total >= 1e-300:
        raise UnderflowError("message weights underflowed")
    return GaussianMixture(w / total, mu[:, None], v[:, None, None])


def message_update(graph, messages, src, dst):
    """Normalized updated message src -> dst."""
    return _to_mixture(*message_update_raw(graph, messages, src, dst))


def belief_update(graph, messages, node):
    """Normalized belief at a node: potential times all incoming messages."""
    w, mu, v = _parts(graph.potentials[node])
    for k in graph.neighbors(node):
        incoming = messages.get(k, node)
        if incoming is None:
            continue
        w2, mu2, v2 = _parts(incoming)
        w, mu, v = _pair_product(w, mu, v, w2, mu2, v2)
    return _to_mixture(w, mu, v)


def default_bp_reducer(m=4, cost=None, restarts=3, seed=0):
    """Reduction settings used inside BP: squared-L2 cost at lam = 0 with a
    small restart budget."""
    return ReductionConfig(
        M=m,
        cost=cost if cost is not None else CostSpec.ise(),
        lam=0.0,
        restarts=restarts,
        seed=seed,
        init_samples=400,
        em_max_iter=50,
    )


@dataclass(frozen=True)
class BpResult:
    """Per-iteration beliefs (list of per-node mixtures), the raw message
    orders produced by each round, and the orders actually stored (after any
    reduction)."""

    beliefs: tuple
    raw_orders: tuple
    stored_orders: tuple


def _prune_weights(mix, floor=1e-12):
    keep = mix.weights >= floor
    if keep.all():
        return mix
    return GaussianMixture(mix.weights[keep], mix.means[keep], mix.covs[keep])


def run_bp(graph, iterations, reducer=None, component_cap=10**6):
    """Synchronous BP for the given number of rounds.

    Exact mode (reducer None) keeps every component and raises once any
    message would exceed component_cap.  With a reducer, every message whose
    order exceeds reducer.M is reduced to order reducer.M before the next
    round; reductions are seeded per (round, edge) so results do not depend
    on scheduling order.
    """
    messages = MessageSet.empty()
    beliefs_out = []
    raw_orders_out = []
    stored_orders_out = []
    directed = []
    for i, j, _ in graph.edges:
        directed.append((i, j))
        directed.append((j, i))
    directed.sort()

    for t in range(1, iterations + 1):
        raw = {}
        new = {}
        for src, dst in directed:
            w, mu, v = message_update_raw(graph, messages, src, dst)
            raw[(src, dst)] = w.shape[0]
            if reducer is None and w.shape[0] > component_cap:
                raise ValueError(
                    f"message order {w.shape[0]} exceeds the exact-mode cap {component_cap}"
                )
            msg = _to_mixture(w, mu, v)
            if reducer is not None and msg.order > reducer.M:
                msg = _prune_weights(msg)
                if msg.order > reducer.M:
                    seed = np.random.SeedSequence(
                        [int(reducer.seed), t, src, dst]
                    ).generate_state(1)[0]
                    cfg = replace(reducer, seed=int(seed))
                    msg = reduce_with_restarts(msg, cfg).reduced
                    msg = _prune_weights(msg)
            new[(src, dst)] = msg
        messages = MessageSet(messages=new, iteration=t)
        raw_orders_out.append(raw)
        stored_orders_out.append({k: v.order for k, v in new.items()})
        beliefs_out.append(tuple(belief_update(graph, messages, i) for i in range(graph.n_nodes)))

    return BpResult(
        beliefs=tuple(beliefs_out),
        raw_orders=tuple(raw_orders_out),
        stored_orders=tuple(stored_orders_out),
    )
