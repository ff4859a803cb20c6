"""Synthetic planted-partition fixtures.

Real interaction datasets and commercial domain scores cannot be bundled, so
tests and demos run on generated data with known ground truth: a handful of
planted communities, each with its own verified authors, unverified
retweeters, activity skew and propensity for not-reputable domains.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .graph import BipartiteGraph
from .reputability import DomainAnnotation, ReputabilityLabel, write_annotations


@dataclass
class SynthConfig:
    n_communities: int = 4
    verified_per_community: int = 15
    unverified_per_community: int = 485
    posts_per_verified: tuple[int, int] = (20, 45)
    posts_per_unverified: tuple[int, int] = (0, 2)
    retweets_per_unverified: tuple[int, int] = (8, 18)
    retweets_per_verified: tuple[int, int] = (0, 3)
    cross_community_prob: float = 0.03
    url_prob: float = 0.9
    # probability that a post's url points at a not-reputable domain,
    # per community; remaining mass splits into QR / Others / R below
    nr_propensity: tuple[float, ...] = (0.35, 0.05, 0.03, 0.02)
    qr_propensity: float = 0.04
    others_propensity: float = 0.15
    n_r_domains: int = 30
    n_nr_domains: int = 12
    n_qr_domains: int = 6
    n_other_domains: int = 10
    start_time: int = 1_600_000_000
    time_span: int = 86_400 * 30
    seed: int = 7


@dataclass
class SynthData:
    records: list[dict]
    annotations: dict[str, DomainAnnotation]
    ground_truth: dict[str, str]  # user_id -> planted block name
    verified_users: list[str]
    unverified_users: list[str]
    config: SynthConfig = field(repr=False, default_factory=SynthConfig)


def _domains(cfg: SynthConfig):
    r = [f"reliable-news-{k}.it" for k in range(cfg.n_r_domains)]
    nr = [f"junk-source-{k}.info" for k in range(cfg.n_nr_domains)]
    qr = [f"borderline-press-{k}.it" for k in range(cfg.n_qr_domains)]
    other = [f"misc-site-{k}.com" for k in range(cfg.n_other_domains)]
    ann: dict[str, DomainAnnotation] = {}
    for d in r:
        ann[d] = DomainAnnotation(d, ReputabilityLabel.R, score=85.0,
                                  source="newsguard_file")
    for d in nr:
        ann[d] = DomainAnnotation(d, ReputabilityLabel.NR, score=30.0,
                                  source="newsguard_file")
    for d in qr:
        ann[d] = DomainAnnotation(d, ReputabilityLabel.QR, score=60.0,
                                  source="newsguard_file")
    for d in other:
        ann[d] = DomainAnnotation(d, ReputabilityLabel.S, source="manual")
    return r, nr, qr, other, ann


def generate(cfg: SynthConfig | None = None) -> SynthData:
    """Generate a deterministic planted-community tweet corpus."""
    cfg = cfg or SynthConfig()
    if len(cfg.nr_propensity) < cfg.n_communities:
        raise ValueError("need one nr_propensity per community")
    rng = random.Random(cfg.seed)
    r_doms, nr_doms, qr_doms, other_doms, annotations = _domains(cfg)

    verified = {c: [f"v{c}_{k:03d}" for k in range(cfg.verified_per_community)]
                for c in range(cfg.n_communities)}
    unverified = {c: [f"u{c}_{k:04d}" for k in range(cfg.unverified_per_community)]
                  for c in range(cfg.n_communities)}
    ground_truth = {}
    for c in range(cfg.n_communities):
        for u in verified[c] + unverified[c]:
            ground_truth[u] = f"block{c}"

    def pick_url(community: int, counter: int) -> list[str]:
        if rng.random() >= cfg.url_prob:
            return []
        roll = rng.random()
        if roll < cfg.nr_propensity[community]:
            dom = rng.choice(nr_doms)
        elif roll < cfg.nr_propensity[community] + cfg.qr_propensity:
            dom = rng.choice(qr_doms)
        elif roll < cfg.nr_propensity[community] + cfg.qr_propensity \
                + cfg.others_propensity:
            dom = rng.choice(other_doms)
        else:
            dom = rng.choice(r_doms)
        return [f"https://{dom}/item-{counter}"]

    def stamp() -> int:
        return cfg.start_time + rng.randrange(cfg.time_span)

    records: list[dict] = []
    posts_by_comm: dict[int, list[dict]] = {c: [] for c in range(cfg.n_communities)}
    counter = 0

    def add_post(author: str, is_verified: bool, community: int):
        nonlocal counter
        rec = {
            "post_id": f"p{counter:07d}",
            "author_id": author,
            "author_verified": is_verified,
            "timestamp": stamp(),
            "urls": pick_url(community, counter),
            "retweet_of": None,
            "lang": "it",
        }
        counter += 1
        records.append(rec)
        posts_by_comm[community].append(rec)

    for c in range(cfg.n_communities):
        for author in verified[c]:
            for _ in range(rng.randint(*cfg.posts_per_verified)):
                add_post(author, True, c)
        for author in unverified[c]:
            for _ in range(rng.randint(*cfg.posts_per_unverified)):
                add_post(author, False, c)

    def add_retweet(user: str, is_verified: bool, home: int):
        nonlocal counter
        if rng.random() < cfg.cross_community_prob and cfg.n_communities > 1:
            others = [c for c in range(cfg.n_communities) if c != home]
            target_comm = rng.choice(others)
        else:
            target_comm = home
        pool = posts_by_comm[target_comm]
        if not pool:
            return
        target = rng.choice(pool)
        if target["author_id"] == user:
            return
        records.append({
            "post_id": f"p{counter:07d}",
            "author_id": user,
            "author_verified": is_verified,
            "timestamp": stamp(),
            "urls": list(target["urls"]),
            "retweet_of": target["post_id"],
            "lang": "it",
        })
        counter += 1

    for c in range(cfg.n_communities):
        for user in unverified[c]:
            for _ in range(rng.randint(*cfg.retweets_per_unverified)):
                add_retweet(user, False, c)
        for user in verified[c]:
            for _ in range(rng.randint(*cfg.retweets_per_verified)):
                add_retweet(user, True, c)

    return SynthData(
        records=records,
        annotations=annotations,
        ground_truth=ground_truth,
        verified_users=sorted(v for vs in verified.values() for v in vs),
        unverified_users=sorted(u for us in unverified.values() for u in us),
        config=cfg,
    )


def write_fixture(out_dir: str | Path, cfg: SynthConfig | None = None) -> dict:
    """Write tweets.jsonl, annotations.csv, ground_truth.csv and a run config.

    Returns the paths plus the generated data object.
    """
    cfg = cfg or SynthConfig()
    data = generate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tweets = out / "tweets.jsonl"
    with open(tweets, "w", encoding="utf-8") as fh:
        for rec in data.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    ann_path = write_annotations(data.annotations, out / "annotations.csv")

    truth = out / "ground_truth.csv"
    with open(truth, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,community\n")
        for user in sorted(data.ground_truth):
            fh.write(f"{user},{data.ground_truth[user]}\n")

    config_path = out / "config.toml"
    config_path.write_text(
        "[run]\n"
        f'input = "{tweets}"\n'
        f'annotations = "{ann_path}"\n'
        f'output_dir = "{out / "run"}"\n'
        f"seed = {cfg.seed}\n"
        "\n[reputability]\n"
        "min_occurrence_verified = 20\n"
        "min_occurrence_directed = 20\n",
        encoding="utf-8")

    return {"tweets": tweets, "annotations": ann_path, "ground_truth": truth,
            "config": config_path, "data": data}


def planted_bipartite(n_left_per_block: int, n_right_per_block: int,
                      p_within: float = 0.3, p_cross: float = 0.01,
                      n_blocks: int = 2, seed: int = 0):
    """Two-layer planted-partition graph; returns (graph, left-block labels)."""
    rng = random.Random(seed)
    n_left = n_left_per_block * n_blocks
    n_right = n_right_per_block * n_blocks
    edges = []
    for i in range(n_left):
        bi = i // n_left_per_block
        for a in range(n_right):
            ba = a // n_right_per_block
            p = p_within if bi == ba else p_cross
            if rng.random() < p:
                edges.append((i, a))
    g = BipartiteGraph.from_indices(n_left, n_right, edges)
    blocks = {g.left_ids[i]: i // n_left_per_block for i in range(n_left)}
    return g, blocks
