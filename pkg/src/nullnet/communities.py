"""Community structure of validated projections.

Louvain is order-dependent, so partitions are computed over many restarts
with independently shuffled node orders and the maximum-modularity partition
is kept. Seed labels (typically the communities of verified users) propagate
over the directed validated network by asynchronous majority voting, and
hub/authority scores rank accounts by how effectively their posts travel.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import ConvergenceError, GraphError, ValidationError
from .projection import ValidatedProjection

DEFAULT_RESTART_CAP = 1000


@dataclass(frozen=True)
class Partition:
    """Node-to-community mapping with the modularity that selected it.

    Community ids are contiguous integers, ordered by decreasing community
    size (ties by smallest member id). ``restart_modularities`` records the
    score of every restart examined. ``parent`` is set when this partition
    subdivides a single community of a coarser one.
    """

    membership: dict[str, int]
    modularity: float
    restart_count: int
    rng_seed: int
    restart_modularities: tuple[float, ...] = ()
    parent: int | None = None

    def communities(self) -> dict[int, set[str]]:
        out: dict[int, set[str]] = {}
        for node, cid in self.membership.items():
            out.setdefault(cid, set()).add(node)
        return out

    def labels(self, prefix: str = "C") -> dict[str, str]:
        """Render membership as string labels (namespaced under ``parent``)."""
        if self.parent is None:
            return {n: f"{prefix}{c}" for n, c in self.membership.items()}
        return {n: f"{prefix}{self.parent}.{c}"
                for n, c in self.membership.items()}


@dataclass(frozen=True)
class LabelAssignment:
    """Propagated labels; seed nodes keep their input label by construction."""

    labels: dict[str, str]
    seed_nodes: frozenset[str]
    iterations_to_converge: int


@dataclass(frozen=True)
class HubScores:
    """Hub/authority vectors, each normalized to unit Euclidean norm."""

    hubs: dict[str, float]
    authorities: dict[str, float]
    iterations: int


def _as_nx_graph(g: ValidatedProjection | nx.Graph) -> nx.Graph:
    """Undirected simple-graph view with deterministic node order."""
    if isinstance(g, nx.Graph) and not g.is_directed():
        out = nx.Graph()
        out.add_nodes_from(sorted(g.nodes))
        out.add_edges_from(sorted(tuple(sorted(e)) for e in g.edges))
        return out
    if isinstance(g, ValidatedProjection):
        out = nx.Graph()
        out.add_nodes_from(g.node_ids)
        out.add_edges_from(tuple(sorted(e.pair)) for e in g.edges)
        return out
    raise ValidationError("expected a ValidatedProjection or undirected graph")


def _as_nx_digraph(g: ValidatedProjection | nx.DiGraph) -> nx.DiGraph:
    if isinstance(g, nx.DiGraph):
        return g
    if isinstance(g, ValidatedProjection):
        out = nx.DiGraph()
        out.add_nodes_from(g.node_ids)
        if g.directed:
            out.add_edges_from(e.pair for e in g.edges)
        else:
            raise ValidationError("projection is undirected")
        return out
    raise ValidationError("expected a ValidatedProjection or DiGraph")


def modularity(g: ValidatedProjection | nx.Graph,
               partition: Partition | dict[str, int]) -> float:
    """Newman-Girvan modularity of a node partition on the binary graph.

    Q = sum over communities of [ L_c/m - (d_c / 2m)^2 ]; 0 for an edgeless
    graph. Raises if the partition misses a node.
    """
    G = _as_nx_graph(g)
    membership = partition.membership if isinstance(partition, Partition) \
        else partition
    missing = [n for n in G.nodes if n not in membership]
    if missing:
        raise ValidationError(f"partition does not cover node {missing[0]!r}")
    m = G.number_of_edges()
    if m == 0:
        return 0.0
    internal: dict[int, int] = {}
    deg_sum: dict[int, int] = {}
    for node in G.nodes:
        cid = membership[node]
        deg_sum[cid] = deg_sum.get(cid, 0) + G.degree(node)
    for u, v in G.edges:
        if membership[u] == membership[v]:
            cid = membership[u]
            internal[cid] = internal.get(cid, 0) + 1
    q = 0.0
    for cid, dsum in deg_sum.items():
        q += internal.get(cid, 0) / m - (dsum / (2.0 * m)) ** 2
    return q


def _canonical_ids(communities: list[set[str]]) -> dict[str, int]:
    orderable = sorted(communities, key=lambda c: (-len(c), min(c)))
    return {node: cid for cid, comm in enumerate(orderable) for node in comm}


def louvain_best(g: ValidatedProjection | nx.Graph,
                 n_restarts: int | None = None,
                 seed: int = 0,
                 restart_cap: int = DEFAULT_RESTART_CAP) -> Partition:
    """Best-of-restarts Louvain partition.

    Each restart shuffles the node visiting order with its own stream derived
    from ``seed``; the partition with the highest modularity wins. The
    default restart count is one per node, capped at ``restart_cap``.
    An edgeless graph yields singleton communities with modularity 0.
    """
    G = _as_nx_graph(g)
    if G.number_of_nodes() == 0:
        raise GraphError("empty graph")
    if G.number_of_edges() == 0:
        membership = {n: i for i, n in enumerate(sorted(G.nodes))}
        return Partition(membership=membership, modularity=0.0,
                         restart_count=0, rng_seed=seed)
    if n_restarts is None:
        n_restarts = min(G.number_of_nodes(), restart_cap)
    if n_restarts < 1:
        raise ValidationError("n_restarts must be >= 1")
    master = random.Random(seed)
    best_comms: list[set[str]] | None = None
    best_q = -np.inf
    scores = []
    for _ in range(n_restarts):
        restart_seed = master.randrange(2**63)
        comms = nx.community.louvain_communities(
            G, resolution=1.0, seed=random.Random(restart_seed))
        comms = [set(c) for c in comms]
        q = modularity(G, _canonical_ids(comms))
        scores.append(q)
        if q > best_q:
            best_q = q
            best_comms = comms
    assert best_comms is not None
    return Partition(membership=_canonical_ids(best_comms),
                     modularity=float(best_q),
                     restart_count=n_restarts,
                     rng_seed=seed,
                     restart_modularities=tuple(scores))


def subcommunities(g: ValidatedProjection | nx.Graph,
                   partition: Partition,
                   community_id: int,
                   n_restarts: int | None = None,
                   seed: int = 0) -> Partition:
    """Re-run best-of-restarts Louvain inside one community of ``partition``."""
    members = {n for n, c in partition.membership.items() if c == community_id}
    if not members:
        raise ValidationError(f"no community {community_id} in partition")
    if len(members) < 2:
        raise ValidationError(
            f"community {community_id} has fewer than 2 nodes")
    G = _as_nx_graph(g).subgraph(members).copy()
    sub = louvain_best(G, n_restarts=n_restarts, seed=seed)
    return Partition(membership=sub.membership, modularity=sub.modularity,
                     restart_count=sub.restart_count, rng_seed=sub.rng_seed,
                     restart_modularities=sub.restart_modularities,
                     parent=community_id)


def propagate_labels(g: ValidatedProjection | nx.Graph | nx.DiGraph,
                     seeds: LabelAssignment | dict[str, str],
                     seed: int = 0,
                     max_sweeps: int = 100) -> LabelAssignment:
    """Asynchronous label propagation from fixed seed labels.

    Direction is ignored for neighbor counting (affiliation, not flow). Every
    non-seed node repeatedly adopts the most frequent label among its labeled
    neighbors, ties broken uniformly at random, until a full sweep changes
    nothing or ``max_sweeps`` is hit. Seeds never change; nodes unreachable
    from any seed stay unlabeled.
    """
    if isinstance(g, nx.DiGraph):
        G = _as_nx_graph(g.to_undirected(as_view=False))
    else:
        G = _as_nx_graph(g)
    seed_labels = dict(seeds.labels) if isinstance(seeds, LabelAssignment) \
        else dict(seeds)
    if not seed_labels:
        raise ValidationError("at least one seed label required")
    unknown = [n for n in seed_labels if n not in G.nodes]
    if unknown:
        raise ValidationError(f"seed node {unknown[0]!r} not in graph")

    rng = random.Random(seed)
    labels = dict(seed_labels)
    free_nodes = sorted(n for n in G.nodes if n not in seed_labels)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = False
        order = list(free_nodes)
        rng.shuffle(order)
        for node in order:
            tally: dict[str, int] = {}
            for nbr in G.neighbors(node):
                lab = labels.get(nbr)
                if lab is not None:
                    tally[lab] = tally.get(lab, 0) + 1
            if not tally:
                continue
            top = max(tally.values())
            tied = sorted(lab for lab, c in tally.items() if c == top)
            new = tied[0] if len(tied) == 1 else rng.choice(tied)
            if labels.get(node) != new:
                labels[node] = new
                changed = True
        if not changed:
            break
    return LabelAssignment(labels=labels,
                           seed_nodes=frozenset(seed_labels),
                           iterations_to_converge=sweeps)


def hits_scores(g: ValidatedProjection | nx.DiGraph,
                tol: float = 1e-8,
                max_iter: int = 1000) -> HubScores:
    """Hub/authority scores by power iteration with unit-norm rescaling."""
    G = _as_nx_digraph(g)
    if G.number_of_edges() == 0:
        raise GraphError("hub scores need at least one edge")
    nodes = sorted(G.nodes)
    index = {n: k for k, n in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)))
    for u, v in G.edges:
        A[index[u], index[v]] = 1.0
    h, a, iterations = _hits_power_iteration(A, tol, max_iter)
    return HubScores(hubs={n: float(h[index[n]]) for n in nodes},
                     authorities={n: float(a[index[n]]) for n in nodes},
                     iterations=iterations)


def _hits_power_iteration(A: np.ndarray, tol: float, max_iter: int):
    """Mutual hub/authority recursion on an adjacency matrix.

    Raises :class:`ConvergenceError` if the max score change stays above
    ``tol`` after ``max_iter`` steps. Scores are scale-invariant in ``A``.
    """
    n = A.shape[0]
    h = np.full(n, 1.0 / np.sqrt(n))
    a = np.full(n, 1.0 / np.sqrt(n))
    for it in range(1, max_iter + 1):
        a_new = A.T @ h
        norm = np.linalg.norm(a_new)
        a_new = a_new / norm if norm > 0 else a_new
        h_new = A @ a_new
        norm = np.linalg.norm(h_new)
        h_new = h_new / norm if norm > 0 else h_new
        delta = max(float(np.max(np.abs(h_new - h))),
                    float(np.max(np.abs(a_new - a))))
        h, a = h_new, a_new
        if delta <= tol:
            return h, a, it
    raise ConvergenceError(
        f"hub scores did not converge within {max_iter} iterations",
        iterations=max_iter)


# --- file formats -------------------------------------------------------------

def write_membership_csv(mapping: dict[str, str] | dict[str, int],
                         path: str | Path,
                         manifest_extra: dict | None = None) -> Path:
    """CSV ``node_id,community`` plus a JSON manifest."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "community"])
        for node in sorted(mapping):
            w.writerow([node, mapping[node]])
    from .graph import sha256_file
    manifest = {"n_nodes": len(mapping), "checksum": sha256_file(path)}
    if manifest_extra:
        manifest.update(manifest_extra)
    mpath = path.with_suffix(path.suffix + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
    return path


def read_membership_csv(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            out[r["node_id"]] = r["community"]
    return out
