"""Sparse bipartite network structures.

Two representations are provided:

* :class:`BipartiteGraph` -- an undirected binary bipartite graph over a
  "left" layer and a "right" layer (e.g. verified vs unverified accounts).
* :class:`DirectedBipartiteGraph` -- users on the left, posts on the right,
  with two independent binary relations: an authorship block (user wrote
  post) and a retweet block (user reshared post).

Graphs are immutable after construction; every query below is a pure read
and safe to call concurrently. Node indices are assigned deterministically
(lexicographic order of the external string ids) so that repeated builds
from the same data are identical, not merely isomorphic.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .errors import GraphError

LAYER_LEFT = "left"
LAYER_RIGHT = "right"


def _index_map(ids: Iterable[str]) -> tuple[tuple[str, ...], dict[str, int]]:
    ordered = tuple(sorted(set(ids)))
    return ordered, {v: i for i, v in enumerate(ordered)}


def _check_ids(pairs: Iterable[tuple[str, str]]) -> list[tuple[str, str]]:
    out = []
    for a, b in pairs:
        if not isinstance(a, str) or not isinstance(b, str) or not a or not b:
            raise GraphError(f"node ids must be non-empty strings, got ({a!r}, {b!r})")
        out.append((a, b))
    return out


class BipartiteGraph:
    """Undirected binary bipartite graph stored as a sparse edge set.

    Parameters
    ----------
    left_ids, right_ids:
        External identifiers per layer; order defines the index maps.
    edges:
        Iterable of ``(i, alpha)`` index pairs, ``i`` on the left layer and
        ``alpha`` on the right. Duplicates collapse to a single edge.
    """

    __slots__ = ("left_ids", "right_ids", "left_index", "right_index",
                 "edges", "_adj_left", "_adj_right")

    def __init__(self, left_ids: Sequence[str], right_ids: Sequence[str],
                 edges: Iterable[tuple[int, int]]):
        self.left_ids = tuple(left_ids)
        self.right_ids = tuple(right_ids)
        if len(set(self.left_ids)) != len(self.left_ids):
            raise GraphError("duplicate left ids")
        if len(set(self.right_ids)) != len(self.right_ids):
            raise GraphError("duplicate right ids")
        self.left_index = {v: i for i, v in enumerate(self.left_ids)}
        self.right_index = {v: i for i, v in enumerate(self.right_ids)}
        uniq = set()
        for i, a in edges:
            if not (0 <= i < len(self.left_ids)) or not (0 <= a < len(self.right_ids)):
                raise GraphError(f"edge ({i}, {a}) out of bounds")
            uniq.add((int(i), int(a)))
        self.edges = tuple(sorted(uniq))
        adj_l: list[set[int]] = [set() for _ in self.left_ids]
        adj_r: list[set[int]] = [set() for _ in self.right_ids]
        for i, a in self.edges:
            adj_l[i].add(a)
            adj_r[a].add(i)
        self._adj_left = tuple(frozenset(s) for s in adj_l)
        self._adj_right = tuple(frozenset(s) for s in adj_r)

    @classmethod
    def from_indices(cls, n_left: int, n_right: int,
                     edges: Iterable[tuple[int, int]]) -> "BipartiteGraph":
        """Build with generated ids ``L0000..``/``R0000..`` (sort-stable)."""
        wl = max(4, len(str(max(n_left - 1, 0))))
        wr = max(4, len(str(max(n_right - 1, 0))))
        return cls([f"L{i:0{wl}d}" for i in range(n_left)],
                   [f"R{a:0{wr}d}" for a in range(n_right)], edges)

    @property
    def n_left(self) -> int:
        return len(self.left_ids)

    @property
    def n_right(self) -> int:
        return len(self.right_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def left_neighbors(self, i: int) -> frozenset[int]:
        return self._adj_left[i]

    def right_neighbors(self, alpha: int) -> frozenset[int]:
        return self._adj_right[alpha]

    def edge_list(self) -> list[tuple[str, str]]:
        """Edges as external id pairs, deterministic order."""
        return [(self.left_ids[i], self.right_ids[a]) for i, a in self.edges]

    def __repr__(self) -> str:  # pragma: no cover
        return (f"BipartiteGraph(n_left={self.n_left}, n_right={self.n_right}, "
                f"n_edges={self.n_edges})")


class DirectedBipartiteGraph:
    """Directed user/post bipartite graph with authorship and retweet blocks.

    ``block_m`` holds authorship links (user ``i`` wrote post ``alpha``);
    ``block_n`` holds retweet links (user ``i`` reshared post ``alpha``).
    Every post has exactly one author. Self-retweets (author resharing an
    own post) are dropped at construction and counted in
    ``self_retweets_dropped``.
    """

    __slots__ = ("left_ids", "right_ids", "left_index", "right_index",
                 "block_m", "block_n", "self_retweets_dropped",
                 "_author_of", "_posts_of", "_retweeters_of", "_retweeted_by")

    def __init__(self, left_ids: Sequence[str], right_ids: Sequence[str],
                 block_m: Iterable[tuple[int, int]],
                 block_n: Iterable[tuple[int, int]]):
        self.left_ids = tuple(left_ids)
        self.right_ids = tuple(right_ids)
        self.left_index = {v: i for i, v in enumerate(self.left_ids)}
        self.right_index = {v: i for i, v in enumerate(self.right_ids)}
        n_l, n_r = len(self.left_ids), len(self.right_ids)

        m_edges = set()
        for i, a in block_m:
            if not (0 <= i < n_l) or not (0 <= a < n_r):
                raise GraphError(f"authorship edge ({i}, {a}) out of bounds")
            m_edges.add((int(i), int(a)))
        author_of: dict[int, int] = {}
        for i, a in m_edges:
            if a in author_of:
                raise GraphError(
                    f"post {self.right_ids[a]!r} has more than one author")
            author_of[a] = i
        missing = n_r - len(author_of)
        if missing:
            raise GraphError(f"{missing} post(s) have no author")

        n_edges = set()
        dropped = 0
        for i, a in block_n:
            if not (0 <= i < n_l) or not (0 <= a < n_r):
                raise GraphError(f"retweet edge ({i}, {a}) out of bounds")
            if author_of.get(int(a)) == int(i):
                dropped += 1
                continue
            n_edges.add((int(i), int(a)))

        self.block_m = tuple(sorted(m_edges))
        self.block_n = tuple(sorted(n_edges))
        self.self_retweets_dropped = dropped
        self._author_of = author_of
        posts_of: list[set[int]] = [set() for _ in range(n_l)]
        for i, a in self.block_m:
            posts_of[i].add(a)
        self._posts_of = tuple(frozenset(s) for s in posts_of)
        retweeters: list[set[int]] = [set() for _ in range(n_r)]
        retweeted: list[set[int]] = [set() for _ in range(n_l)]
        for i, a in self.block_n:
            retweeters[a].add(i)
            retweeted[i].add(a)
        self._retweeters_of = tuple(frozenset(s) for s in retweeters)
        self._retweeted_by = tuple(frozenset(s) for s in retweeted)

    @property
    def n_left(self) -> int:
        return len(self.left_ids)

    @property
    def n_right(self) -> int:
        return len(self.right_ids)

    def author_of(self, alpha: int) -> int:
        return self._author_of[alpha]

    def posts_of(self, i: int) -> frozenset[int]:
        """Posts authored by user ``i``."""
        return self._posts_of[i]

    def retweeters_of(self, alpha: int) -> frozenset[int]:
        return self._retweeters_of[alpha]

    def retweeted_by(self, i: int) -> frozenset[int]:
        """Posts reshared by user ``i``."""
        return self._retweeted_by[i]

    def __repr__(self) -> str:  # pragma: no cover
        return (f"DirectedBipartiteGraph(n_users={self.n_left}, "
                f"n_posts={self.n_right}, authorship={len(self.block_m)}, "
                f"retweets={len(self.block_n)})")


def build_bipartite(edge_list: Iterable[tuple[str, str]]) -> BipartiteGraph:
    """Build an undirected bipartite graph from ``(left_id, right_id)`` pairs.

    Duplicate pairs collapse to a single edge; index maps follow the sorted
    id order. Raises :class:`GraphError` on an empty edge list.
    """
    pairs = _check_ids(edge_list)
    if not pairs:
        raise GraphError("empty graph")
    left_ids, left_index = _index_map(a for a, _ in pairs)
    right_ids, right_index = _index_map(b for _, b in pairs)
    edges = {(left_index[a], right_index[b]) for a, b in pairs}
    return BipartiteGraph(left_ids, right_ids, edges)


def build_directed_bipartite(
        author_edges: Iterable[tuple[str, str]],
        retweet_edges: Iterable[tuple[str, str]]) -> DirectedBipartiteGraph:
    """Build a user/post directed bipartite graph from id pairs.

    ``author_edges`` are ``(user_id, post_id)`` authorship pairs (exactly one
    author per post); ``retweet_edges`` are ``(user_id, post_id)`` reshares.
    Self-retweets are dropped and counted on the resulting graph.
    """
    authors = _check_ids(author_edges)
    retweets = _check_ids(retweet_edges)
    if not authors:
        raise GraphError("empty graph")
    user_ids, user_index = _index_map(
        [u for u, _ in authors] + [u for u, _ in retweets])
    post_ids, post_index = _index_map([p for _, p in authors])
    for _, p in retweets:
        if p not in post_index:
            raise GraphError(f"retweet of unknown post {p!r}")
    block_m = {(user_index[u], post_index[p]) for u, p in authors}
    block_n = {(user_index[u], post_index[p]) for u, p in retweets}
    return DirectedBipartiteGraph(user_ids, post_ids, block_m, block_n)


def connectance(g: BipartiteGraph) -> float:
    """Edge density: edges / (n_left * n_right)."""
    if g.n_left == 0 or g.n_right == 0:
        raise GraphError("connectance undefined for an empty layer")
    return g.n_edges / (g.n_left * g.n_right)


def degrees(g: BipartiteGraph | DirectedBipartiteGraph, layer: str,
            direction: str | None = None) -> np.ndarray:
    """Degree sequence of one layer as an integer vector.

    For undirected graphs ``direction`` must be omitted. For directed graphs
    it is required: on the user layer, ``out`` counts authored posts and
    ``in`` counts posts reshared; on the post layer, ``in`` counts authors
    (always one) and ``out`` counts resharers.
    """
    if layer not in (LAYER_LEFT, LAYER_RIGHT):
        raise GraphError(f"unknown layer {layer!r}")
    if isinstance(g, BipartiteGraph):
        if direction is not None:
            raise GraphError("direction given for undirected graph")
        if layer == LAYER_LEFT:
            return np.array([len(g.left_neighbors(i)) for i in range(g.n_left)],
                            dtype=np.int64)
        return np.array([len(g.right_neighbors(a)) for a in range(g.n_right)],
                        dtype=np.int64)
    if direction not in ("out", "in"):
        raise GraphError("direction ('out' or 'in') required for directed graph")
    if layer == LAYER_LEFT:
        if direction == "out":
            src = [g.posts_of(i) for i in range(g.n_left)]
        else:
            src = [g.retweeted_by(i) for i in range(g.n_left)]
    else:
        if direction == "out":
            src = [g.retweeters_of(a) for a in range(g.n_right)]
        else:
            src = [{g.author_of(a)} for a in range(g.n_right)]
    return np.array([len(s) for s in src], dtype=np.int64)


# --- file formats -----------------------------------------------------------
#
# Edge lists are UTF-8 CSV with a header; alongside each emitted edge list a
# JSON manifest records node/edge counts and the file's sha256.

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_bipartite_csv(g: BipartiteGraph, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["left_id", "right_id"])
        w.writerows(g.edge_list())
    manifest = {
        "n_left": g.n_left,
        "n_right": g.n_right,
        "n_edges": g.n_edges,
        "checksum": sha256_file(path),
    }
    mpath = path.with_suffix(path.suffix + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
    return path


def read_bipartite_csv(path: str | Path) -> BipartiteGraph:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                not {"left_id", "right_id"} <= set(reader.fieldnames):
            raise GraphError(f"{path}: expected columns left_id,right_id")
        rows = [(r["left_id"], r["right_id"]) for r in reader]
    return build_bipartite(rows)


def write_directed_csv(g: DirectedBipartiteGraph, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "post_id", "kind"])
        for i, a in g.block_m:
            w.writerow([g.left_ids[i], g.right_ids[a], "author"])
        for i, a in g.block_n:
            w.writerow([g.left_ids[i], g.right_ids[a], "retweet"])
    manifest = {
        "n_users": g.n_left,
        "n_posts": g.n_right,
        "n_author_edges": len(g.block_m),
        "n_retweet_edges": len(g.block_n),
        "self_retweets_dropped": g.self_retweets_dropped,
        "checksum": sha256_file(path),
    }
    mpath = path.with_suffix(path.suffix + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")
    return path


def read_directed_csv(path: str | Path) -> DirectedBipartiteGraph:
    authors, retweets = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"user_id", "post_id", "kind"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise GraphError(f"{path}: expected columns user_id,post_id,kind")
        for r in reader:
            kind = r["kind"]
            if kind == "author":
                authors.append((r["user_id"], r["post_id"]))
            elif kind == "retweet":
                retweets.append((r["user_id"], r["post_id"]))
            else:
                raise GraphError(f"{path}: unknown edge kind {kind!r}")
    return build_directed_bipartite(authors, retweets)
