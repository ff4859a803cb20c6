"""Statistically validated monopartite projections of bipartite graphs.

A pair of left-layer nodes is linked in the projection only when the number
of right-layer neighbors they share (their V-motif count; for directed
graphs, the number of posts one authored and the other reshared) is
statistically incompatible with the fitted null model after a
Benjamini-Hochberg false-discovery-rate pass.

Under a null with independent links the motif count follows a
Poisson-Binomial distribution; for sparse graphs its upper tail is well
approximated by a Poisson with the same mean, which is the default here.
The exact Poisson-Binomial tail (via PMF convolution) is available for small
families and for testing.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import GraphError, ValidationError
from .graph import BipartiteGraph, DirectedBipartiteGraph, sha256_file
from .nullmodel import (
    MODE_CHUNG_LU,
    BicmParams,
    BidcmParams,
    probability_matrix,
)

POISSON = "poisson"
POISSON_BINOMIAL = "poisson_binomial"

FAMILY_NONZERO = "nonzero"
FAMILY_ALL_PAIRS = "all-pairs"


@dataclass(frozen=True)
class MotifStatistics:
    """Observed/expected motif count and null p-value for one node pair."""

    pair: tuple[str, str]
    observed: int
    expected: float
    p_value: float
    distribution_mode: str


@dataclass(frozen=True)
class ValidatedProjection:
    """Monopartite graph of FDR-surviving pairs, with per-edge statistics.

    ``node_ids`` lists only nodes incident to a validated edge; the number
    of layer nodes left out is reported in ``isolated_dropped``. For a
    directed projection an edge ``(i, j)`` means flow from author ``i`` to
    resharer ``j``.
    """

    node_ids: tuple[str, ...]
    edges: tuple[MotifStatistics, ...]
    directed: bool
    fdr_alpha: float
    family_size: int
    tested_count: int
    rejected_count: int
    isolated_dropped: int

    def neighbors_undirected(self) -> dict[str, set[str]]:
        """Adjacency ignoring direction (used for propagation and Louvain)."""
        adj: dict[str, set[str]] = {n: set() for n in self.node_ids}
        for e in self.edges:
            a, b = e.pair
            adj[a].add(b)
            adj[b].add(a)
        return adj


# --- motif counting ----------------------------------------------------------

def count_v_motifs(g: BipartiteGraph, i: int, j: int) -> int:
    """Number of right-layer neighbors shared by left nodes ``i`` and ``j``."""
    if i == j:
        raise GraphError("V-motifs are defined for distinct nodes")
    return len(g.left_neighbors(i) & g.left_neighbors(j))


def count_directed_v_motifs(g: DirectedBipartiteGraph, i: int, j: int) -> int:
    """Posts authored by ``i`` and reshared by ``j`` (asymmetric in i, j)."""
    if i == j:
        raise GraphError("directed V-motifs are defined for distinct nodes")
    return len(g.posts_of(i) & g.retweeted_by(j))


def expected_v_motifs(params: BicmParams | BidcmParams, i: int, j: int) -> float:
    """Mean motif count under the null.

    Undirected: ``sum_a p_ia * p_ja``. Directed: the closed form
    ``k_i_out * k_j_in / n_posts`` (authorship probability is uniform over
    posts and the retweet block preserves per-user reshare counts).
    """
    if isinstance(params, BidcmParams):
        return float(params.out_degrees[i]) * float(params.in_degrees[j]) \
            / params.n_posts
    pi = _pair_probabilities_undirected(params, i)
    pj = _pair_probabilities_undirected(params, j)
    return float(np.dot(pi, pj))


def _pair_probabilities_undirected(params: BicmParams, i: int) -> np.ndarray:
    prod = params.x[i] * params.y
    if params.mode == MODE_CHUNG_LU:
        return np.minimum(prod, 1.0)
    return prod / (1.0 + prod)


# --- p-values ----------------------------------------------------------------

def poisson_binomial_pmf(probabilities) -> np.ndarray:
    """Exact PMF of a sum of independent Bernoullis, by convolution."""
    pmf = np.array([1.0])
    for p in probabilities:
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"probability {p} outside [0, 1]")
        nxt = np.zeros(len(pmf) + 1)
        nxt[:-1] = pmf * (1.0 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def motif_p_value(observed: int, probabilities=None,
                  poisson_mean: float | None = None,
                  mode: str = POISSON) -> float:
    """Upper-tail probability ``P(X >= observed)`` under the null.

    ``poisson`` mode needs the mean (or derives it from ``probabilities``);
    ``poisson_binomial`` computes the exact tail from the per-event
    probabilities. An observed count of 0 always yields exactly 1.
    """
    if observed < 0:
        raise ValidationError("observed count must be non-negative")
    if observed == 0:
        return 1.0
    if mode == POISSON:
        lam = poisson_mean
        if lam is None:
            if probabilities is None:
                raise ValidationError("poisson mode needs a mean or probabilities")
            lam = float(np.sum(probabilities))
        if lam < 0:
            raise ValidationError("poisson mean must be non-negative")
        return float(stats.poisson.sf(observed - 1, lam))
    if mode == POISSON_BINOMIAL:
        if probabilities is None:
            raise ValidationError("poisson_binomial mode needs probabilities")
        pmf = poisson_binomial_pmf(probabilities)
        if observed >= len(pmf):
            return 0.0
        return float(min(1.0, pmf[observed:].sum()))
    raise ValidationError(f"unknown p-value mode {mode!r}")


def fdr_select(p_values, alpha: float, family_size: int | None = None) -> set:
    """Benjamini-Hochberg selection over ``(key, p_value)`` pairs.

    Sorts ascending, finds the largest rank ``k`` with
    ``p_(k) <= k * alpha / m`` and rejects hypotheses 1..k. ``family_size``
    overrides ``m`` when the supplied list omits p = 1 members of the family.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    items = list(p_values)
    if not items:
        raise ValidationError("empty hypothesis family")
    m = family_size if family_size is not None else len(items)
    if m < len(items):
        raise ValidationError("family_size smaller than supplied family")
    items.sort(key=lambda kv: (kv[1], kv[0]))
    k_star = 0
    for rank, (_, p) in enumerate(items, start=1):
        if p <= rank * alpha / m:
            k_star = rank
    return {key for key, _ in items[:k_star]}


# --- validated projection ----------------------------------------------------

def _observed_pairs_undirected(g: BipartiteGraph) -> Counter:
    counts: Counter = Counter()
    for a in range(g.n_right):
        nbrs = sorted(g.right_neighbors(a))
        for u_idx in range(len(nbrs)):
            for v_idx in range(u_idx + 1, len(nbrs)):
                counts[(nbrs[u_idx], nbrs[v_idx])] += 1
    return counts


def _observed_pairs_directed(g: DirectedBipartiteGraph) -> Counter:
    counts: Counter = Counter()
    for a in range(g.n_right):
        i = g.author_of(a)
        for j in g.retweeters_of(a):
            counts[(i, j)] += 1
    return counts


def _expected_undirected(params: BicmParams, pairs: list) -> np.ndarray:
    """Null means for the given left-node pairs."""
    if params.mode == MODE_CHUNG_LU and params.capped_pairs == 0:
        # sum_a (k_i k_a / m)(k_j k_a / m) = k_i k_j * sum_a k_a^2 / m^2,
        # valid only when no pair was clipped.
        s2 = float(np.sum(params.y * params.y))
        return np.array([params.x[i] * params.x[j] * s2 for i, j in pairs])
    P = probability_matrix(params)
    lam = P @ P.T
    return np.array([lam[i, j] for i, j in pairs])


def validate_projection(g: BipartiteGraph | DirectedBipartiteGraph,
                        params: BicmParams | BidcmParams,
                        alpha: float = 0.05,
                        mode: str = POISSON,
                        fdr_family: str = FAMILY_NONZERO,
                        ) -> ValidatedProjection:
    """Project ``g`` onto the user layer, keeping only FDR-surviving pairs.

    Hypotheses are tested for every pair with at least one observed motif
    (pairs with zero overlap have p-value 1 and can never be rejected;
    ``fdr_family='all-pairs'`` still counts them in the family size).
    Deterministic for fixed inputs: pairs are processed in sorted order.
    """
    directed = isinstance(g, DirectedBipartiteGraph)
    if directed != isinstance(params, BidcmParams):
        raise ValidationError("graph and params kinds do not match")
    if fdr_family not in (FAMILY_NONZERO, FAMILY_ALL_PAIRS):
        raise ValidationError(f"unknown fdr_family {fdr_family!r}")

    if directed:
        counts = _observed_pairs_directed(g)
    else:
        counts = _observed_pairs_undirected(g)
    pairs = sorted(counts)
    observed = np.array([counts[p] for p in pairs], dtype=np.int64)

    if directed:
        out_d = params.out_degrees.astype(float)
        in_d = params.in_degrees.astype(float)
        expected = np.array([out_d[i] * in_d[j] / params.n_posts
                             for i, j in pairs])
    else:
        expected = _expected_undirected(params, pairs)

    if mode == POISSON:
        p_values = stats.poisson.sf(observed - 1, expected) if len(pairs) \
            else np.array([])
    elif mode == POISSON_BINOMIAL:
        p_values = np.array([
            motif_p_value(int(obs),
                          probabilities=_event_probabilities(g, params, i, j),
                          mode=POISSON_BINOMIAL)
            for (i, j), obs in zip(pairs, observed)])
    else:
        raise ValidationError(f"unknown p-value mode {mode!r}")

    n = g.n_left
    if fdr_family == FAMILY_ALL_PAIRS:
        family_size = n * (n - 1) if directed else n * (n - 1) // 2
    else:
        family_size = len(pairs)

    rejected: set = set()
    if pairs:
        rejected = fdr_select(list(zip(pairs, p_values)), alpha,
                              family_size=family_size)

    ids = g.left_ids
    edge_stats = []
    endpoint_ids = set()
    for (i, j), obs, lam, pv in zip(pairs, observed, expected, p_values):
        if (i, j) not in rejected:
            continue
        pair_ids = (ids[i], ids[j])
        edge_stats.append(MotifStatistics(
            pair=pair_ids, observed=int(obs), expected=float(lam),
            p_value=float(pv), distribution_mode=mode))
        endpoint_ids.update(pair_ids)
    edge_stats.sort(key=lambda e: e.pair)
    return ValidatedProjection(
        node_ids=tuple(sorted(endpoint_ids)),
        edges=tuple(edge_stats),
        directed=directed,
        fdr_alpha=alpha,
        family_size=family_size,
        tested_count=len(pairs),
        rejected_count=len(edge_stats),
        isolated_dropped=n - len(endpoint_ids),
    )


def _event_probabilities(g, params, i: int, j: int) -> np.ndarray:
    """Per-post probability that the pair's motif occurs at that post."""
    if isinstance(params, BidcmParams):
        q_i = params.out_degrees[i] / params.n_posts
        qp_j = np.array([params.retweet_probability(j, a)
                         for a in range(params.n_posts)])
        return q_i * qp_j
    return _pair_probabilities_undirected(params, i) * \
        _pair_probabilities_undirected(params, j)


def sample_from_null(params: BicmParams, rng: np.random.Generator) -> BipartiteGraph:
    """Draw one graph from the fitted null (independent Bernoulli links)."""
    P = probability_matrix(params)
    draw = rng.random(P.shape) < P
    edges = [(int(i), int(a)) for i, a in zip(*np.nonzero(draw))]
    return BipartiteGraph.from_indices(params.n_left, params.n_right, edges)


# --- file formats -------------------------------------------------------------

def write_projection_csv(proj: ValidatedProjection, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "observed", "expected", "p_value"])
        for e in proj.edges:
            w.writerow([e.pair[0], e.pair[1], e.observed,
                        f"{e.expected:.12g}", f"{e.p_value:.12g}"])
    manifest = {
        "alpha": proj.fdr_alpha,
        "directed": proj.directed,
        "family_size": proj.family_size,
        "tested_count": proj.tested_count,
        "rejected_count": proj.rejected_count,
        "isolated_dropped": proj.isolated_dropped,
        "n_nodes": len(proj.node_ids),
        "mode": proj.edges[0].distribution_mode if proj.edges else POISSON,
        "checksum": sha256_file(path),
    }
    mpath = path.with_suffix(path.suffix + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
    return path


def read_projection_csv(path: str | Path) -> ValidatedProjection:
    path = Path(path)
    mpath = path.with_suffix(path.suffix + ".manifest.json")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    edges = []
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            edges.append(MotifStatistics(
                pair=(r["source"], r["target"]),
                observed=int(r["observed"]),
                expected=float(r["expected"]),
                p_value=float(r["p_value"]),
                distribution_mode=manifest.get("mode", POISSON)))
    nodes = sorted({n for e in edges for n in e.pair})
    return ValidatedProjection(
        node_ids=tuple(nodes), edges=tuple(edges),
        directed=bool(manifest["directed"]),
        fdr_alpha=float(manifest["alpha"]),
        family_size=int(manifest["family_size"]),
        tested_count=int(manifest["tested_count"]),
        rejected_count=int(manifest["rejected_count"]),
        isolated_dropped=int(manifest["isolated_dropped"]))
