"""News-domain reputability: labels, domain extraction, per-community reports.

Domains are classified Reputable / Quasi-Reputable / Not-Reputable from a
0-100 credibility-and-transparency score (the 55-65 band, inclusive, is the
quasi-reputable buffer) or from direct labels. Non-news categories (social
networks, marketplaces, ...) and unclassified domains are reported together
as "Others". Scores for real domains are supplied by the user; nothing
proprietary ships with the package.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from urllib.parse import urlparse

import numpy as np

from .errors import ValidationError


class ReputabilityLabel(str, Enum):
    R = "R"        # reputable news source
    QR = "QR"      # quasi reputable news source (rendered "~R")
    NR = "NR"      # not reputable news source
    S = "S"        # social network
    F = "F"        # fundraiser / petition site
    M = "M"        # marketplace
    P = "P"        # official journal of a political party
    IS = "IS"      # institutional site
    ST = "ST"      # online streaming platform
    SE = "SE"      # search engine
    UNC = "UNC"    # unclassified

    @property
    def display(self) -> str:
        return "~R" if self is ReputabilityLabel.QR else self.value


NEWS_LABELS = {ReputabilityLabel.R, ReputabilityLabel.QR, ReputabilityLabel.NR}

_LABEL_ALIASES = {"~R": "QR", "~r": "QR"}


def parse_label(text: str) -> ReputabilityLabel:
    text = _LABEL_ALIASES.get(text.strip(), text.strip().upper())
    try:
        return ReputabilityLabel(text)
    except ValueError:
        raise ValidationError(f"unknown reputability label {text!r}") from None


def score_to_label(score: float) -> ReputabilityLabel:
    """Score band: below 55 -> NR, 55-65 inclusive -> QR, above 65 -> R."""
    if not 0 <= score <= 100:
        raise ValidationError(f"score {score} outside [0, 100]")
    if score < 55:
        return ReputabilityLabel.NR
    if score <= 65:
        return ReputabilityLabel.QR
    return ReputabilityLabel.R


@dataclass(frozen=True)
class DomainAnnotation:
    """Reputability assignment for one second-level domain."""

    domain: str
    label: ReputabilityLabel
    score: float | None = None
    source: str = "manual"

    def __post_init__(self):
        if self.score is not None and score_to_label(self.score) != self.label:
            raise ValidationError(
                f"label {self.label.value} inconsistent with score "
                f"{self.score} for {self.domain!r}")


# Multi-part public suffixes the extractor must not split. Covers the
# suffixes that actually occur in news-domain data; extend as needed.
_MULTIPART_SUFFIXES = frozenset({
    "co.uk", "ac.uk", "gov.uk", "org.uk", "net.uk", "me.uk", "ltd.uk",
    "co.jp", "ne.jp", "or.jp", "ac.jp", "go.jp",
    "com.au", "net.au", "org.au", "edu.au", "gov.au",
    "com.br", "org.br", "gov.br", "net.br",
    "com.ar", "com.mx", "com.co", "com.pe", "com.ve",
    "com.cn", "net.cn", "org.cn", "gov.cn",
    "com.hk", "com.sg", "com.tw", "com.my", "com.ph",
    "co.in", "net.in", "org.in", "gen.in",
    "co.kr", "or.kr", "co.za", "org.za", "co.nz", "net.nz", "org.nz",
    "com.tr", "org.tr", "gov.tr", "com.pl", "com.pt", "com.gr",
    "com.eg", "com.sa", "com.ua", "in.ua", "com.ru",
})

_HOST_OK = frozenset("abcdefghijklmnopqrstuvwxyz0123456789-.")


def extract_domain(url: str, keep_subdomains: bool = False) -> str:
    """Registrable (second-level) domain of an absolute http(s) URL.

    ``www.`` and other subdomains collapse to the registrable domain by
    default; with ``keep_subdomains`` the full host is preserved (minus a
    leading ``www.``) so that e.g. a mobile mirror stays distinct from its
    parent site. Raises :class:`ValidationError` on anything unparsable.
    """
    if not isinstance(url, str) or not url.strip():
        raise ValidationError("empty url")
    parsed = urlparse(url.strip())
    if parsed.scheme not in ("http", "https"):
        raise ValidationError(f"not an absolute http(s) url: {url!r}")
    host = parsed.hostname
    if not host:
        raise ValidationError(f"url has no host: {url!r}")
    host = host.strip(".").lower()
    if not host or not set(host) <= _HOST_OK or ".." in host:
        raise ValidationError(f"invalid host in url: {url!r}")
    labels = host.split(".")
    if len(labels) < 2:
        raise ValidationError(f"no registrable domain in {url!r}")
    if keep_subdomains:
        return host[4:] if host.startswith("www.") and len(labels) > 2 else host
    if len(labels) >= 3 and ".".join(labels[-2:]) in _MULTIPART_SUFFIXES:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def fleiss_kappa(ratings) -> float:
    """Fleiss' kappa for an items x categories matrix of rater counts.

    Every item must be rated by the same number (>= 2) of raters. Returns 1
    exactly when all raters agree on every item.
    """
    mat = np.asarray(ratings, dtype=float)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 2:
        raise ValidationError("ratings must be a 2-D items x categories matrix")
    if np.any(mat < 0) or np.any(mat != np.floor(mat)):
        raise ValidationError("ratings must be non-negative integer counts")
    row_sums = mat.sum(axis=1)
    n = row_sums[0]
    if n < 2 or np.any(row_sums != n):
        raise ValidationError(
            "every item must be rated by the same number (>= 2) of raters")
    n_items = mat.shape[0]
    p_i = (np.sum(mat * mat, axis=1) - n) / (n * (n - 1))
    p_bar = float(np.mean(p_i))
    p_j = mat.sum(axis=0) / (n_items * n)
    p_e = float(np.sum(p_j * p_j))
    if p_e >= 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


# --- annotation files ---------------------------------------------------------

def load_annotations(path: str | Path) -> dict[str, DomainAnnotation]:
    """Read the annotation CSV ``domain,score,label,source``.

    Either a score or a label is required per row; a score alone derives the
    label from the band rule.
    """
    out: dict[str, DomainAnnotation] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "domain" not in reader.fieldnames:
            raise ValidationError(f"{path}: expected a 'domain' column")
        for lineno, row in enumerate(reader, start=2):
            domain = (row.get("domain") or "").strip().lower()
            if not domain:
                raise ValidationError(f"{path}:{lineno}: missing domain")
            raw_score = (row.get("score") or "").strip()
            raw_label = (row.get("label") or "").strip()
            source = (row.get("source") or "manual").strip() or "manual"
            score = float(raw_score) if raw_score else None
            if score is None and not raw_label:
                raise ValidationError(
                    f"{path}:{lineno}: either score or label required")
            label = parse_label(raw_label) if raw_label else score_to_label(score)
            out[domain] = DomainAnnotation(domain=domain, label=label,
                                           score=score, source=source)
    return out


def write_annotations(annotations: dict[str, DomainAnnotation],
                      path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "score", "label", "source"])
        for domain in sorted(annotations):
            ann = annotations[domain]
            w.writerow([domain, "" if ann.score is None else f"{ann.score:g}",
                        ann.label.value, ann.source])
    return path


# --- per-community aggregation --------------------------------------------------
#
# Post rows are plain dicts following the JSONL interface:
#   {post_id, author_id, retweeter_id?, timestamp, urls: [...]}
# A row with a retweeter_id is a retweet attributed to the retweeter;
# otherwise it is an original post attributed to its author.

@dataclass(frozen=True)
class TypeStats:
    posts: int = 0
    urls: int = 0
    distinct_urls: int = 0
    domains: int = 0
    users: int = 0


@dataclass(frozen=True)
class CommunityReport:
    community: str
    url_count: int
    pct_r: float
    pct_qr: float
    pct_nr: float
    pct_others: float
    tweets: TypeStats | None = None
    retweets: TypeStats | None = None


def _row_user(row: dict) -> str:
    return row.get("retweeter_id") or row["author_id"]


def _row_kind(row: dict) -> str:
    return "rt" if row.get("retweeter_id") else "tw"


def _membership_map(membership) -> dict[str, str]:
    if hasattr(membership, "labels"):
        labels = membership.labels
        return dict(labels) if isinstance(labels, dict) else dict(labels())
    return dict(membership)


def resolve_domain_labels(posts, annotations: dict[str, DomainAnnotation],
                          min_occurrence: int = 1,
                          keep_subdomains: bool = False):
    """Map every domain in the table to a label, honoring the occurrence cut.

    Domains occurring fewer than ``min_occurrence`` times across the whole
    table stay unclassified. Returns ``(labels, occurrences, bad_urls)``.
    """
    if min_occurrence < 1:
        raise ValidationError("min_occurrence must be >= 1")
    occurrences: Counter = Counter()
    bad_urls = 0
    for row in posts:
        for url in row.get("urls", ()):
            try:
                occurrences[extract_domain(url, keep_subdomains)] += 1
            except ValidationError:
                bad_urls += 1
    labels: dict[str, ReputabilityLabel] = {}
    for domain, count in occurrences.items():
        if count >= min_occurrence and domain in annotations:
            labels[domain] = annotations[domain].label
        else:
            labels[domain] = ReputabilityLabel.UNC
    return labels, occurrences, bad_urls


def aggregate_reputability(posts, membership,
                           annotations: dict[str, DomainAnnotation],
                           min_occurrence: int = 20,
                           split_by_type: bool = True,
                           keep_subdomains: bool = False
                           ) -> list[CommunityReport]:
    """Per-community url counts and R/QR/NR/Others percentages.

    Rows are attributed to the community of the acting user (retweeter for
    retweets, author otherwise); rows of users without a community label are
    skipped. Percentages are over all urls of the community and sum to 100.
    """
    rows = list(posts)
    if not rows:
        raise ValidationError("empty post table")
    member_of = _membership_map(membership)
    domain_labels, _, _ = resolve_domain_labels(
        rows, annotations, min_occurrence, keep_subdomains)

    by_comm: dict[str, list[dict]] = {}
    for row in rows:
        community = member_of.get(_row_user(row))
        if community is None:
            continue
        by_comm.setdefault(community, []).append(row)

    reports = []
    for community in sorted(by_comm):
        class_counts = Counter()
        url_count = 0
        per_kind: dict[str, dict] = {
            "tw": {"posts": 0, "urls": 0, "u_set": set(), "d_set": set(),
                   "users": set()},
            "rt": {"posts": 0, "urls": 0, "u_set": set(), "d_set": set(),
                   "users": set()},
        }
        for row in by_comm[community]:
            kind = _row_kind(row)
            agg = per_kind[kind]
            agg["posts"] += 1
            agg["users"].add(_row_user(row))
            for url in row.get("urls", ()):
                try:
                    domain = extract_domain(url, keep_subdomains)
                except ValidationError:
                    continue
                url_count += 1
                agg["urls"] += 1
                agg["u_set"].add(url)
                agg["d_set"].add(domain)
                label = domain_labels[domain]
                if label in NEWS_LABELS:
                    class_counts[label] += 1
                else:
                    class_counts[ReputabilityLabel.UNC] += 1

        def pct(label):
            if url_count == 0:
                return 0.0
            return 100.0 * class_counts.get(label, 0) / url_count

        others = 0.0 if url_count == 0 else \
            100.0 - pct(ReputabilityLabel.R) - pct(ReputabilityLabel.QR) \
            - pct(ReputabilityLabel.NR)
        if url_count == 0:
            others = 100.0

        def stats(kind):
            agg = per_kind[kind]
            return TypeStats(posts=agg["posts"], urls=agg["urls"],
                             distinct_urls=len(agg["u_set"]),
                             domains=len(agg["d_set"]),
                             users=len(agg["users"]))

        reports.append(CommunityReport(
            community=community, url_count=url_count,
            pct_r=pct(ReputabilityLabel.R), pct_qr=pct(ReputabilityLabel.QR),
            pct_nr=pct(ReputabilityLabel.NR), pct_others=others,
            tweets=stats("tw") if split_by_type else None,
            retweets=stats("rt") if split_by_type else None))
    reports.sort(key=lambda r: (-r.url_count, r.community))
    return reports


@dataclass(frozen=True)
class NrShareRow:
    community: str
    nr_posts: int
    nr_urls: int
    nr_distinct_urls: int
    nr_distinct_domains: int
    nr_users: int
    mean_nr_posts_per_user: float
    no_nr_users: bool
    share_pct: float
    top_domains: tuple[tuple[str, int], ...]


def nr_share_report(posts, membership,
                    annotations: dict[str, DomainAnnotation],
                    min_occurrence: int = 1,
                    keep_subdomains: bool = False,
                    top_n: int = 20) -> list[NrShareRow]:
    """How much of the not-reputable traffic each community carries.

    ``share_pct`` is the community's slice of all NR urls across the reported
    communities; ``top_domains`` is its NR domain frequency list. Communities
    with no NR urls report a mean of 0 with ``no_nr_users`` set.
    """
    rows = list(posts)
    if not rows:
        raise ValidationError("empty post table")
    member_of = _membership_map(membership)
    domain_labels, _, _ = resolve_domain_labels(
        rows, annotations, min_occurrence, keep_subdomains)

    stats: dict[str, dict] = {}
    for row in rows:
        community = member_of.get(_row_user(row))
        if community is None:
            continue
        agg = stats.setdefault(community, {
            "posts": 0, "urls": 0, "u_set": set(), "domains": Counter(),
            "user_posts": Counter()})
        nr_in_row = 0
        for url in row.get("urls", ()):
            try:
                domain = extract_domain(url, keep_subdomains)
            except ValidationError:
                continue
            if domain_labels[domain] is ReputabilityLabel.NR:
                nr_in_row += 1
                agg["urls"] += 1
                agg["u_set"].add(url)
                agg["domains"][domain] += 1
        if nr_in_row:
            agg["posts"] += 1
            agg["user_posts"][_row_user(row)] += 1

    total_nr = sum(agg["urls"] for agg in stats.values())
    out = []
    for community in sorted(stats):
        agg = stats[community]
        users = len(agg["user_posts"])
        mean = agg["posts"] / users if users else 0.0
        share = 100.0 * agg["urls"] / total_nr if total_nr else 0.0
        top = tuple(sorted(agg["domains"].items(),
                           key=lambda kv: (-kv[1], kv[0]))[:top_n])
        out.append(NrShareRow(
            community=community, nr_posts=agg["posts"], nr_urls=agg["urls"],
            nr_distinct_urls=len(agg["u_set"]),
            nr_distinct_domains=len(agg["domains"]),
            nr_users=users, mean_nr_posts_per_user=mean,
            no_nr_users=users == 0, share_pct=share, top_domains=top))
    out.sort(key=lambda r: (-r.nr_urls, r.community))
    return out


@dataclass(frozen=True)
class TimeseriesBucket:
    bucket_start: int  # epoch seconds, UTC
    r: int
    qr: int
    nr: int
    others: int

    @property
    def iso(self) -> str:
        return datetime.fromtimestamp(self.bucket_start, tz=timezone.utc) \
            .strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TimeseriesReport:
    buckets: tuple[TimeseriesBucket, ...]
    skipped_timestamps: int


def _parse_timestamp(value) -> int:
    if isinstance(value, bool):
        raise ValidationError("bad timestamp")
    if isinstance(value, (int, float)):
        return int(value)
    if isinstance(value, str):
        try:
            return int(float(value))
        except ValueError:
            pass
        try:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            raise ValidationError(f"bad timestamp {value!r}") from None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp())
    raise ValidationError(f"bad timestamp {value!r}")


def timeseries_report(posts, annotations: dict[str, DomainAnnotation],
                      bucket_seconds: int = 86_400,
                      min_occurrence: int = 1,
                      keep_subdomains: bool = False) -> TimeseriesReport:
    """Url counts per label class over dense time buckets.

    Buckets are aligned to multiples of ``bucket_seconds`` since the epoch;
    empty buckets between the first and last are zero-filled. Rows with
    unparseable timestamps are counted and skipped.
    """
    if bucket_seconds <= 0:
        raise ValidationError("bucket_seconds must be positive")
    rows = list(posts)
    domain_labels, _, _ = resolve_domain_labels(
        rows, annotations, min_occurrence, keep_subdomains)
    per_bucket: dict[int, Counter] = {}
    skipped = 0
    for row in rows:
        try:
            ts = _parse_timestamp(row.get("timestamp"))
        except ValidationError:
            skipped += 1
            continue
        start = (ts // bucket_seconds) * bucket_seconds
        counter = per_bucket.setdefault(start, Counter())
        for url in row.get("urls", ()):
            try:
                domain = extract_domain(url, keep_subdomains)
            except ValidationError:
                continue
            label = domain_labels[domain]
            key = label if label in NEWS_LABELS else ReputabilityLabel.UNC
            counter[key] += 1
    buckets = []
    if per_bucket:
        lo, hi = min(per_bucket), max(per_bucket)
        for start in range(lo, hi + bucket_seconds, bucket_seconds):
            c = per_bucket.get(start, Counter())
            buckets.append(TimeseriesBucket(
                bucket_start=start,
                r=c.get(ReputabilityLabel.R, 0),
                qr=c.get(ReputabilityLabel.QR, 0),
                nr=c.get(ReputabilityLabel.NR, 0),
                others=c.get(ReputabilityLabel.UNC, 0)))
    return TimeseriesReport(buckets=tuple(buckets), skipped_timestamps=skipped)


# --- report files ---------------------------------------------------------------

def write_community_reports_csv(reports: list[CommunityReport],
                                path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "url_count", "R", "QR", "NR", "Others",
                    "tw_posts", "tw_urls", "tw_distinct_urls", "tw_domains",
                    "tw_users", "rt_posts", "rt_urls", "rt_distinct_urls",
                    "rt_domains", "rt_users"])
        for r in reports:
            tw = r.tweets or TypeStats()
            rt = r.retweets or TypeStats()
            w.writerow([r.community, r.url_count,
                        f"{r.pct_r:.1f}", f"{r.pct_qr:.1f}",
                        f"{r.pct_nr:.1f}", f"{r.pct_others:.1f}",
                        tw.posts, tw.urls, tw.distinct_urls, tw.domains,
                        tw.users, rt.posts, rt.urls, rt.distinct_urls,
                        rt.domains, rt.users])
    return path


def write_nr_share_csv(rows: list[NrShareRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "nr_posts", "nr_urls", "nr_distinct_urls",
                    "nr_distinct_domains", "nr_users",
                    "mean_nr_posts_per_user", "no_nr_users", "share_pct",
                    "top_domains"])
        for r in rows:
            top = ";".join(f"{d}:{c}" for d, c in r.top_domains)
            w.writerow([r.community, r.nr_posts, r.nr_urls,
                        r.nr_distinct_urls, r.nr_distinct_domains, r.nr_users,
                        f"{r.mean_nr_posts_per_user:.2f}",
                        int(r.no_nr_users), f"{r.share_pct:.1f}", top])
    return path


def write_timeseries_csv(report: TimeseriesReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket_start", "R", "QR", "NR", "Others"])
        for b in report.buckets:
            w.writerow([b.iso, b.r, b.qr, b.nr, b.others])
    return path
