"""End-to-end orchestration.

Stages run in a fixed order, each consuming only artifacts persisted by
earlier stages (flat CSV/JSONL files under the run directory), so any run can
resume from an intermediate stage. All randomized stages draw their stream
from the master seed via stable hashing of the stage name; reruns with the
same config and seed produce byte-identical report files.

Stage order::

    ingest -> verified_graph -> bicm -> undirected_projection -> communities
           -> directed_graph -> bidcm -> directed_projection -> propagation
           -> hits -> reports
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import communities as comm
from . import graph as graphmod
from . import nullmodel, projection, reputability
from .errors import PipelineError, ValidationError
from .graph import sha256_file

STAGES = (
    "ingest",
    "verified_graph",
    "bicm",
    "undirected_projection",
    "communities",
    "directed_graph",
    "bidcm",
    "directed_projection",
    "propagation",
    "hits",
    "reports",
)


def stage_seed(master_seed: int, stage: str) -> int:
    """Stable per-stage RNG seed derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# --- records and store ---------------------------------------------------------

@dataclass(frozen=True)
class TweetRecord:
    post_id: str
    author_id: str
    author_verified: bool
    timestamp: int
    urls: tuple[str, ...] = ()
    retweet_of: str | None = None
    lang: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "TweetRecord":
        post_id = raw.get("post_id")
        author_id = raw.get("author_id")
        verified = raw.get("author_verified")
        if not isinstance(post_id, str) or not post_id:
            raise ValidationError("missing post_id")
        if not isinstance(author_id, str) or not author_id:
            raise ValidationError("missing author_id")
        if not isinstance(verified, bool):
            raise ValidationError("author_verified must be a boolean")
        ts = reputability._parse_timestamp(raw.get("timestamp"))
        urls = raw.get("urls", [])
        if urls is None:
            urls = []
        if not isinstance(urls, list) or \
                any(not isinstance(u, str) for u in urls):
            raise ValidationError("urls must be a list of strings")
        retweet_of = raw.get("retweet_of")
        if retweet_of is not None:
            if not isinstance(retweet_of, str) or not retweet_of:
                raise ValidationError("retweet_of must be a non-empty string")
            if retweet_of == post_id:
                raise ValidationError("retweet_of references the post itself")
        lang = raw.get("lang")
        if lang is not None and not isinstance(lang, str):
            raise ValidationError("lang must be a string")
        return cls(post_id=post_id, author_id=author_id,
                   author_verified=verified, timestamp=ts,
                   urls=tuple(urls), retweet_of=retweet_of, lang=lang)

    def to_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "author_id": self.author_id,
            "author_verified": self.author_verified,
            "timestamp": self.timestamp,
            "urls": list(self.urls),
            "retweet_of": self.retweet_of,
            "lang": self.lang,
        }


class TweetStore:
    """Validated, deduplicated tweet records plus ingestion counters."""

    def __init__(self, records: list[TweetRecord], counters: dict | None = None):
        self.records = list(records)
        self.by_id = {r.post_id: r for r in self.records}
        self.counters = dict(counters or {})

    def __len__(self) -> int:
        return len(self.records)

    def resolve_original(self, rec: TweetRecord,
                         max_depth: int = 16) -> TweetRecord | None:
        """Follow retweet chains to the original post, None if unknown."""
        seen = set()
        current = rec
        for _ in range(max_depth):
            if current.retweet_of is None:
                return current
            if current.post_id in seen:
                return None
            seen.add(current.post_id)
            nxt = self.by_id.get(current.retweet_of)
            if nxt is None:
                return None
            current = nxt
        return None

    def verified_flags(self) -> dict[str, bool]:
        """Per-user verified flag; any record claiming verified wins."""
        flags: dict[str, bool] = {}
        for rec in self.records:
            flags[rec.author_id] = flags.get(rec.author_id, False) \
                or rec.author_verified
        return flags

    def post_rows(self) -> list[dict]:
        """Rows in the reputability post-table shape.

        Originals are attributed to their author; retweets carry the
        retweeter in ``retweeter_id`` plus the resolved original author.
        """
        rows = []
        for rec in self.records:
            if rec.retweet_of is None:
                rows.append({"post_id": rec.post_id,
                             "author_id": rec.author_id,
                             "timestamp": rec.timestamp,
                             "urls": list(rec.urls)})
            else:
                orig = self.resolve_original(rec)
                rows.append({"post_id": rec.post_id,
                             "author_id": orig.author_id if orig
                             else rec.author_id,
                             "retweeter_id": rec.author_id,
                             "timestamp": rec.timestamp,
                             "urls": list(rec.urls)})
        return rows

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "records.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        stats = directory / "ingest_stats.json"
        stats.write_text(json.dumps(self.counters, indent=2, sort_keys=True)
                         + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "TweetStore":
        directory = Path(directory)
        records = []
        with open(directory / "records.jsonl", encoding="utf-8") as fh:
            for line in fh:
                records.append(TweetRecord.from_dict(json.loads(line)))
        stats_path = directory / "ingest_stats.json"
        counters = json.loads(stats_path.read_text(encoding="utf-8")) \
            if stats_path.exists() else {}
        return cls(records, counters)


def ingest(path, language: str | None = None,
           date_start=None, date_end=None,
           max_malformed_fraction: float = 0.5) -> TweetStore:
    """Read JSONL tweet exports into a validated, deduplicated store.

    Malformed lines are counted and skipped; if their fraction exceeds
    ``max_malformed_fraction`` the whole ingest aborts. Duplicate post ids
    keep the first occurrence. Optional filters drop records by language or
    by ``[date_start, date_end)`` (epoch seconds or ISO-8601 strings).
    """
    paths = [Path(p) for p in (path if isinstance(path, (list, tuple))
                               else [path])]
    for p in paths:
        if not p.exists():
            raise ValidationError(f"input path not found: {p}")
    ts_lo = reputability._parse_timestamp(date_start) \
        if date_start is not None else None
    ts_hi = reputability._parse_timestamp(date_end) \
        if date_end is not None else None

    counters = {"lines": 0, "malformed": 0, "duplicates": 0,
                "filtered_language": 0, "filtered_date": 0, "kept": 0}
    records: list[TweetRecord] = []
    seen: set[str] = set()
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                counters["lines"] += 1
                try:
                    rec = TweetRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, ValidationError):
                    counters["malformed"] += 1
                    continue
                if rec.post_id in seen:
                    counters["duplicates"] += 1
                    continue
                if language is not None and rec.lang != language:
                    counters["filtered_language"] += 1
                    continue
                if ts_lo is not None and rec.timestamp < ts_lo:
                    counters["filtered_date"] += 1
                    continue
                if ts_hi is not None and rec.timestamp >= ts_hi:
                    counters["filtered_date"] += 1
                    continue
                seen.add(rec.post_id)
                records.append(rec)
    counters["kept"] = len(records)
    if counters["lines"] and \
            counters["malformed"] / counters["lines"] > max_malformed_fraction:
        raise PipelineError(
            f"{counters['malformed']}/{counters['lines']} malformed lines "
            f"exceed the allowed fraction {max_malformed_fraction}",
            stage="ingest")
    if not records:
        warnings.warn("ingest produced an empty store", stacklevel=2)
    return TweetStore(records, counters)


# --- graph builders --------------------------------------------------------------

def build_verified_bipartite(store: TweetStore):
    """Verified/unverified interaction graph from retweet events.

    An edge links a verified and an unverified account when either retweeted
    the other at least once. Same-layer retweets cannot be represented and
    are counted. Returns ``(graph, stats)``.
    """
    flags = store.verified_flags()
    if not any(flags.values()):
        raise PipelineError("no verified users in store", stage="verified_graph")
    stats = {"verified_verified": 0, "unverified_unverified": 0,
             "self_retweets": 0, "orphan_retweets": 0, "edges": 0}
    pairs = set()
    for rec in store.records:
        if rec.retweet_of is None:
            continue
        orig = store.resolve_original(rec)
        if orig is None:
            stats["orphan_retweets"] += 1
            continue
        retweeter, author = rec.author_id, orig.author_id
        if retweeter == author:
            stats["self_retweets"] += 1
            continue
        rv, av = flags[retweeter], flags[author]
        if rv and av:
            stats["verified_verified"] += 1
        elif not rv and not av:
            stats["unverified_unverified"] += 1
        else:
            v, u = (retweeter, author) if rv else (author, retweeter)
            pairs.add((v, u))
    if not pairs:
        raise PipelineError("no verified/unverified retweet pairs",
                            stage="verified_graph")
    stats["edges"] = len(pairs)
    return graphmod.build_bipartite(sorted(pairs)), stats


def build_user_post_bipartite(store: TweetStore):
    """Directed user/post graph: authorship plus retweet blocks.

    Retweets whose original cannot be resolved in the store are excluded
    from the graph (and from validation) and counted as stubs. Self-retweets
    are dropped by the graph builder itself.
    """
    if not store.records:
        raise PipelineError("empty store", stage="directed_graph")
    author_edges = []
    retweet_edges = []
    stats = {"originals": 0, "retweets": 0, "stub_retweets": 0,
             "self_retweets": 0}
    for rec in store.records:
        if rec.retweet_of is None:
            stats["originals"] += 1
            author_edges.append((rec.author_id, rec.post_id))
            continue
        orig = store.resolve_original(rec)
        if orig is None:
            stats["stub_retweets"] += 1
            continue
        stats["retweets"] += 1
        retweet_edges.append((rec.author_id, orig.post_id))
    g = graphmod.build_directed_bipartite(author_edges, retweet_edges)
    stats["self_retweets"] = g.self_retweets_dropped
    return g, stats


# --- configuration ----------------------------------------------------------------

@dataclass
class PipelineConfig:
    input_path: str
    annotations_path: str
    output_dir: str
    seed: int = 42
    # ingest filters
    language: str | None = None
    date_start: str | None = None
    date_end: str | None = None
    max_malformed_fraction: float = 0.5
    # null models
    null_model: str = "auto"            # exact | chung-lu | auto
    sparse_threshold: float = 0.01
    fit_tol: float = 1e-8
    fit_max_iter: int = 10_000
    # projection
    alpha: float = 0.05
    fdr_family: str = "nonzero"         # nonzero | all-pairs
    pvalue_mode: str = "poisson"        # poisson | poisson_binomial
    # communities
    restarts: int | None = None         # None -> one per node, capped
    restart_cap: int = 1000
    label_source: str = "communities"   # communities | subcommunities
    max_sweeps: int = 100
    hits_tol: float = 1e-8
    hits_max_iter: int = 1000
    seeds_path: str | None = None       # optional external seed labels CSV
    # reputability
    min_occurrence_verified: int = 20
    min_occurrence_directed: int = 100
    keep_subdomains: bool = False
    timeseries_bucket_hours: int = 24

    def validate(self):
        if self.null_model not in ("exact", "chung-lu", "auto"):
            raise ValidationError(f"bad null_model {self.null_model!r}")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.fdr_family not in ("nonzero", "all-pairs"):
            raise ValidationError(f"bad fdr_family {self.fdr_family!r}")
        if self.pvalue_mode not in ("poisson", "poisson_binomial"):
            raise ValidationError(f"bad pvalue_mode {self.pvalue_mode!r}")
        if self.label_source not in ("communities", "subcommunities"):
            raise ValidationError(f"bad label_source {self.label_source!r}")
        if self.min_occurrence_verified < 1 or self.min_occurrence_directed < 1:
            raise ValidationError("min_occurrence must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_KEYS = {
    "run": {"input": "input_path", "annotations": "annotations_path",
            "output_dir": "output_dir", "seed": "seed"},
    "ingest": {"language": "language", "date_start": "date_start",
               "date_end": "date_end",
               "max_malformed_fraction": "max_malformed_fraction"},
    "nullmodel": {"mode": "null_model", "sparse_threshold": "sparse_threshold",
                  "tol": "fit_tol", "max_iter": "fit_max_iter"},
    "projection": {"alpha": "alpha", "fdr_family": "fdr_family",
                   "pvalue_mode": "pvalue_mode"},
    "communities": {"restarts": "restarts", "restart_cap": "restart_cap",
                    "label_source": "label_source", "max_sweeps": "max_sweeps",
                    "hits_tol": "hits_tol", "hits_max_iter": "hits_max_iter",
                    "seeds": "seeds_path"},
    "reputability": {"min_occurrence_verified": "min_occurrence_verified",
                     "min_occurrence_directed": "min_occurrence_directed",
                     "keep_subdomains": "keep_subdomains",
                     "timeseries_bucket_hours": "timeseries_bucket_hours"},
}


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the TOML run configuration."""
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    kwargs = {}
    for section, keys in _SECTION_KEYS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ValidationError(f"config section [{section}] must be a table")
        for key, value in body.items():
            if key not in keys:
                raise ValidationError(
                    f"unknown config key {key!r} in section [{section}]")
            kwargs[keys[key]] = value
    unknown = set(raw) - set(_SECTION_KEYS)
    if unknown:
        raise ValidationError(f"unknown config section [{unknown.pop()}]")
    for required in ("input_path", "annotations_path", "output_dir"):
        if required not in kwargs:
            raise ValidationError(f"config misses required key {required}")
    if "restarts" in kwargs and kwargs["restarts"] == 0:
        kwargs["restarts"] = None
    return PipelineConfig(**kwargs).validate()


# --- run manifest -------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    seed: int
    input_checksums: dict[str, str]
    stages: list[dict] = field(default_factory=list)
    created_utc: str = ""

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.seed,
                "input_checksums": self.input_checksums,
                "stages": self.stages, "created_utc": self.created_utc}

    def write(self, path: str | Path, partial: bool = False) -> Path:
        doc = self.to_dict()
        doc["partial"] = partial
        path = Path(path)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


class _RunPaths:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.store_dir = self.root / "store"
        self.graphs = self.root / "graphs"
        self.models = self.root / "nullmodel"
        self.projections = self.root / "projections"
        self.communities = self.root / "communities"
        self.reports = self.root / "reports"

    def ensure(self):
        for d in (self.root, self.store_dir, self.graphs, self.models,
                  self.projections, self.communities, self.reports):
            d.mkdir(parents=True, exist_ok=True)

    @property
    def verified_graph(self):
        return self.graphs / "verified_bipartite.csv"

    @property
    def directed_graph(self):
        return self.graphs / "user_post.csv"

    @property
    def bicm(self):
        return self.models / "bicm.json"

    @property
    def bidcm(self):
        return self.models / "bidcm.json"

    @property
    def verified_projection(self):
        return self.projections / "verified_projection.csv"

    @property
    def directed_projection(self):
        return self.projections / "directed_projection.csv"

    @property
    def partition(self):
        return self.communities / "verified_partition.csv"

    @property
    def subpartition(self):
        return self.communities / "verified_subcommunities.csv"

    @property
    def propagated(self):
        return self.communities / "propagated_labels.csv"

    @property
    def hubs(self):
        return self.communities / "hub_scores.csv"

    @property
    def manifest(self):
        return self.root / "manifest.json"


class _RunContext:
    """Lazy artifact cache: stages read through these, memory or disk."""

    def __init__(self, cfg: PipelineConfig, paths: _RunPaths):
        self.cfg = cfg
        self.paths = paths
        self._cache: dict[str, object] = {}

    def set(self, key: str, value):
        self._cache[key] = value
        return value

    def store(self) -> TweetStore:
        if "store" not in self._cache:
            self._cache["store"] = TweetStore.load(self.paths.store_dir)
        return self._cache["store"]

    def verified_graph(self):
        if "verified_graph" not in self._cache:
            self._cache["verified_graph"] = \
                graphmod.read_bipartite_csv(self.paths.verified_graph)
        return self._cache["verified_graph"]

    def directed_graph(self):
        if "directed_graph" not in self._cache:
            self._cache["directed_graph"] = \
                graphmod.read_directed_csv(self.paths.directed_graph)
        return self._cache["directed_graph"]

    def bicm(self):
        if "bicm" not in self._cache:
            self._cache["bicm"] = nullmodel.params_from_json(self.paths.bicm)
        return self._cache["bicm"]

    def bidcm(self):
        if "bidcm" not in self._cache:
            self._cache["bidcm"] = nullmodel.params_from_json(self.paths.bidcm)
        return self._cache["bidcm"]

    def verified_projection(self):
        if "verified_projection" not in self._cache:
            self._cache["verified_projection"] = \
                projection.read_projection_csv(self.paths.verified_projection)
        return self._cache["verified_projection"]

    def directed_projection(self):
        if "directed_projection" not in self._cache:
            self._cache["directed_projection"] = \
                projection.read_projection_csv(self.paths.directed_projection)
        return self._cache["directed_projection"]

    def seed_labels(self) -> dict[str, str]:
        if self.cfg.seeds_path:
            return comm.read_membership_csv(self.cfg.seeds_path)
        if self.cfg.label_source == "subcommunities" \
                and self.paths.subpartition.exists():
            return comm.read_membership_csv(self.paths.subpartition)
        return comm.read_membership_csv(self.paths.partition)

    def propagated(self) -> dict[str, str]:
        if "propagated" not in self._cache:
            self._cache["propagated"] = \
                comm.read_membership_csv(self.paths.propagated)
        return self._cache["propagated"]


# --- stage implementations -----------------------------------------------------------

def _fit_undirected(g, cfg: PipelineConfig):
    if cfg.null_model == "exact":
        return nullmodel.fit_bicm(g, tol=cfg.fit_tol, max_iter=cfg.fit_max_iter)
    if cfg.null_model == "chung-lu":
        return nullmodel.fit_chung_lu(g, sparse_threshold=cfg.sparse_threshold)
    return nullmodel.fit_auto(g, tol=cfg.fit_tol, max_iter=cfg.fit_max_iter,
                              sparse_threshold=cfg.sparse_threshold)


def _stage_ingest(ctx: _RunContext):
    cfg = ctx.cfg
    store = ingest(cfg.input_path, language=cfg.language,
                   date_start=cfg.date_start, date_end=cfg.date_end,
                   max_malformed_fraction=cfg.max_malformed_fraction)
    store.write(ctx.paths.store_dir)
    ctx.set("store", store)
    return [ctx.paths.store_dir / "records.jsonl",
            ctx.paths.store_dir / "ingest_stats.json"]


def _stage_verified_graph(ctx: _RunContext):
    g, stats = build_verified_bipartite(ctx.store())
    graphmod.write_bipartite_csv(g, ctx.paths.verified_graph)
    stats_path = ctx.paths.graphs / "verified_stats.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    ctx.set("verified_graph", g)
    return [ctx.paths.verified_graph,
            Path(str(ctx.paths.verified_graph) + ".manifest.json"), stats_path]


def _stage_bicm(ctx: _RunContext):
    params = _fit_undirected(ctx.verified_graph(), ctx.cfg)
    nullmodel.params_to_json(params, ctx.paths.bicm)
    ctx.set("bicm", params)
    return [ctx.paths.bicm]


def _stage_undirected_projection(ctx: _RunContext):
    proj = projection.validate_projection(
        ctx.verified_graph(), ctx.bicm(), alpha=ctx.cfg.alpha,
        mode=ctx.cfg.pvalue_mode, fdr_family=ctx.cfg.fdr_family)
    projection.write_projection_csv(proj, ctx.paths.verified_projection)
    ctx.set("verified_projection", proj)
    return [ctx.paths.verified_projection,
            Path(str(ctx.paths.verified_projection) + ".manifest.json")]


def _stage_communities(ctx: _RunContext):
    cfg = ctx.cfg
    proj = ctx.verified_projection()
    part = comm.louvain_best(proj, n_restarts=cfg.restarts,
                             seed=stage_seed(cfg.seed, "communities"),
                             restart_cap=cfg.restart_cap)
    comm.write_membership_csv(
        part.labels(), ctx.paths.partition,
        manifest_extra={"modularity": part.modularity,
                        "restarts": part.restart_count,
                        "rng_seed": part.rng_seed})
    sub_labels: dict[str, str] = {}
    sub_info = {}
    for cid, members in sorted(part.communities().items()):
        if len(members) < 2:
            sub_labels.update({n: f"C{cid}.0" for n in members})
            continue
        sub = comm.subcommunities(proj, part, cid, n_restarts=cfg.restarts,
                                  seed=stage_seed(cfg.seed, f"sub{cid}"))
        sub_labels.update(sub.labels())
        sub_info[str(cid)] = {"modularity": sub.modularity,
                              "n_subcommunities": len(sub.communities())}
    comm.write_membership_csv(sub_labels, ctx.paths.subpartition,
                              manifest_extra={"parents": sub_info})
    ctx.set("partition", part)
    return [ctx.paths.partition,
            Path(str(ctx.paths.partition) + ".manifest.json"),
            ctx.paths.subpartition,
            Path(str(ctx.paths.subpartition) + ".manifest.json")]


def _stage_directed_graph(ctx: _RunContext):
    g, stats = build_user_post_bipartite(ctx.store())
    graphmod.write_directed_csv(g, ctx.paths.directed_graph)
    stats_path = ctx.paths.graphs / "directed_stats.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    ctx.set("directed_graph", g)
    return [ctx.paths.directed_graph,
            Path(str(ctx.paths.directed_graph) + ".manifest.json"), stats_path]


def _stage_bidcm(ctx: _RunContext):
    cfg = ctx.cfg
    mode = {"exact": "exact", "chung-lu": "chung-lu", "auto": "auto"}[cfg.null_model]
    params = nullmodel.fit_bidcm(ctx.directed_graph(), retweet_mode=mode,
                                 sparse_threshold=cfg.sparse_threshold,
                                 tol=cfg.fit_tol, max_iter=cfg.fit_max_iter)
    nullmodel.params_to_json(params, ctx.paths.bidcm)
    ctx.set("bidcm", params)
    return [ctx.paths.bidcm]


def _stage_directed_projection(ctx: _RunContext):
    proj = projection.validate_projection(
        ctx.directed_graph(), ctx.bidcm(), alpha=ctx.cfg.alpha,
        mode=ctx.cfg.pvalue_mode, fdr_family=ctx.cfg.fdr_family)
    projection.write_projection_csv(proj, ctx.paths.directed_projection)
    ctx.set("directed_projection", proj)
    return [ctx.paths.directed_projection,
            Path(str(ctx.paths.directed_projection) + ".manifest.json")]


def _stage_propagation(ctx: _RunContext):
    cfg = ctx.cfg
    proj = ctx.directed_projection()
    seeds = {n: lab for n, lab in ctx.seed_labels().items()
             if n in set(proj.node_ids)}
    if not seeds:
        warnings.warn("no seed labels present in the directed projection")
        comm.write_membership_csv({}, ctx.paths.propagated,
                                  manifest_extra={"seeds": 0, "sweeps": 0})
        ctx.set("propagated", {})
    else:
        assignment = comm.propagate_labels(
            proj, seeds, seed=stage_seed(cfg.seed, "propagation"),
            max_sweeps=cfg.max_sweeps)
        comm.write_membership_csv(
            assignment.labels, ctx.paths.propagated,
            manifest_extra={"seeds": len(assignment.seed_nodes),
                            "sweeps": assignment.iterations_to_converge})
        ctx.set("propagated", assignment.labels)
    return [ctx.paths.propagated,
            Path(str(ctx.paths.propagated) + ".manifest.json")]


def _stage_hits(ctx: _RunContext):
    proj = ctx.directed_projection()
    path = ctx.paths.hubs
    if not proj.edges:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                ["node_id", "hub", "authority"])
        return [path]
    scores = comm.hits_scores(proj, tol=ctx.cfg.hits_tol,
                              max_iter=ctx.cfg.hits_max_iter)
    ranked = sorted(scores.hubs,
                    key=lambda n: (-scores.hubs[n], n))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "hub", "authority"])
        for n in ranked:
            w.writerow([n, f"{scores.hubs[n]:.12g}",
                        f"{scores.authorities[n]:.12g}"])
    return [path]


def _stage_reports(ctx: _RunContext):
    cfg = ctx.cfg
    annotations = reputability.load_annotations(cfg.annotations_path)
    rows = ctx.store().post_rows()
    outputs = []

    verified_members = comm.read_membership_csv(ctx.paths.partition)
    rep_verified = reputability.aggregate_reputability(
        rows, verified_members, annotations,
        min_occurrence=cfg.min_occurrence_verified,
        keep_subdomains=cfg.keep_subdomains)
    p = reputability.write_community_reports_csv(
        rep_verified, ctx.paths.reports / "verified_reputability.csv")
    outputs.append(p)

    propagated = ctx.propagated()
    if propagated:
        rep_all = reputability.aggregate_reputability(
            rows, propagated, annotations,
            min_occurrence=cfg.min_occurrence_directed,
            keep_subdomains=cfg.keep_subdomains)
        p = reputability.write_community_reports_csv(
            rep_all, ctx.paths.reports / "community_reputability.csv")
        outputs.append(p)
        nr_rows = reputability.nr_share_report(
            rows, propagated, annotations,
            min_occurrence=cfg.min_occurrence_directed,
            keep_subdomains=cfg.keep_subdomains)
        p = reputability.write_nr_share_csv(
            nr_rows, ctx.paths.reports / "nr_share.csv")
        outputs.append(p)

    ts = reputability.timeseries_report(
        rows, annotations,
        bucket_seconds=cfg.timeseries_bucket_hours * 3600,
        min_occurrence=1, keep_subdomains=cfg.keep_subdomains)
    p = reputability.write_timeseries_csv(ts, ctx.paths.reports / "timeseries.csv")
    outputs.append(p)

    summary = {
        "store_counters": ctx.store().counters,
        "timeseries_skipped_timestamps": ts.skipped_timestamps,
        "n_communities_reported": len(rep_verified),
    }
    sp = ctx.paths.reports / "summary.json"
    sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                  encoding="utf-8")
    outputs.append(sp)
    return outputs


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "verified_graph": _stage_verified_graph,
    "bicm": _stage_bicm,
    "undirected_projection": _stage_undirected_projection,
    "communities": _stage_communities,
    "directed_graph": _stage_directed_graph,
    "bidcm": _stage_bidcm,
    "directed_projection": _stage_directed_projection,
    "propagation": _stage_propagation,
    "hits": _stage_hits,
    "reports": _stage_reports,
}


def run_full_pipeline(config: PipelineConfig, from_stage: str | None = None,
                      only: list[str] | None = None) -> RunManifest:
    """Execute the pipeline, or a suffix/subset of it, and write the manifest.

    ``from_stage`` skips everything before the named stage (earlier artifacts
    are read from disk); ``only`` runs exactly the named stages. A stage
    failure writes a partial manifest and raises :class:`PipelineError`.
    """
    config.validate()
    paths = _RunPaths(config.output_dir)
    paths.ensure()

    if only is not None:
        selected = [s for s in STAGES if s in set(only)]
        missing = set(only) - set(STAGES)
        if missing:
            raise ValidationError(f"unknown stage {missing.pop()!r}")
    elif from_stage is not None:
        if from_stage not in STAGES:
            raise ValidationError(f"unknown stage {from_stage!r}")
        selected = list(STAGES[STAGES.index(from_stage):])
    else:
        selected = list(STAGES)

    checksums = {}
    for label, p in (("input", config.input_path),
                     ("annotations", config.annotations_path)):
        if p and Path(p).exists():
            checksums[label] = sha256_file(p)
    manifest = RunManifest(
        config=config.to_dict(), seed=config.seed,
        input_checksums=checksums,
        created_utc=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"))

    ctx = _RunContext(config, paths)
    for name in selected:
        t0 = time.perf_counter()
        try:
            outputs = _STAGE_FUNCS[name](ctx)
        except Exception as exc:
            manifest.write(paths.manifest, partial=True)
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(f"stage {name!r} failed: {exc}",
                                stage=name) from exc
        manifest.stages.append({
            "name": name,
            "seconds": round(time.perf_counter() - t0, 3),
            "outputs": {str(Path(p).relative_to(paths.root)): sha256_file(p)
                        for p in outputs},
        })
    manifest.write(paths.manifest)
    return manifest


def verify_report_conservation(rows, reports) -> bool:
    """Audit: every community's class percentages decompose its url count."""
    for rep in reports:
        total_pct = rep.pct_r + rep.pct_qr + rep.pct_nr + rep.pct_others
        if abs(total_pct - 100.0) > 0.1:
            return False
        if rep.tweets is not None and rep.retweets is not None:
            if rep.tweets.urls + rep.retweets.urls != rep.url_count:
                return False
    return True
