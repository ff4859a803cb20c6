import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from nullnet.cli import main as cli_main
from nullnet.errors import PipelineError, ValidationError
from nullnet.graph import sha256_file
from nullnet.pipeline import (
    PipelineConfig,
    TweetRecord,
    TweetStore,
    build_user_post_bipartite,
    build_verified_bipartite,
    ingest,
    load_config,
    run_full_pipeline,
    stage_seed,
)
from nullnet.reputability import aggregate_reputability, load_annotations
from nullnet.pipeline import verify_report_conservation
from nullnet.synth import SynthConfig, write_fixture


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


GOOD = {"post_id": "p1", "author_id": "alice", "author_verified": True,
        "timestamp": 1000, "urls": ["https://rep.it/a"], "lang": "it"}
GOOD2 = {"post_id": "p2", "author_id": "bob", "author_verified": False,
         "timestamp": 2000, "urls": [], "retweet_of": "p1", "lang": "it"}


# --- ingest -----------------------------------------------------------------------

def test_ingest_skips_malformed_and_counts(tmp_path):
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, "{not json", GOOD2])
    store = ingest(path)
    assert len(store) == 2
    assert store.counters["malformed"] == 1
    assert store.counters["kept"] == 2


def test_ingest_dedups_post_ids(tmp_path):
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, GOOD, GOOD2])
    store = ingest(path)
    assert len(store) == 2
    assert store.counters["duplicates"] == 1


def test_ingest_date_filter_excluding_all_warns(tmp_path):
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, GOOD2])
    with pytest.warns(UserWarning, match="empty store"):
        store = ingest(path, date_start=10_000_000)
    assert len(store) == 0
    assert store.counters["filtered_date"] == 2


def test_ingest_language_filter(tmp_path):
    en = dict(GOOD, post_id="p9", lang="en")
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, en])
    store = ingest(path, language="it")
    assert [r.post_id for r in store.records] == ["p1"]
    assert store.counters["filtered_language"] == 1


def test_ingest_aborts_on_malformed_fraction(tmp_path):
    rows = [GOOD] + ["oops"] * 5
    path = _write_jsonl(tmp_path / "in.jsonl", rows)
    with pytest.raises(PipelineError, match="malformed"):
        ingest(path, max_malformed_fraction=0.5)


def test_ingest_missing_path(tmp_path):
    with pytest.raises(ValidationError):
        ingest(tmp_path / "nope.jsonl")


def test_record_validation_rules():
    with pytest.raises(ValidationError):
        TweetRecord.from_dict(dict(GOOD, post_id=""))
    with pytest.raises(ValidationError):
        TweetRecord.from_dict(dict(GOOD, author_verified="yes"))
    with pytest.raises(ValidationError):
        TweetRecord.from_dict(dict(GOOD, retweet_of="p1"))  # self reference
    with pytest.raises(ValidationError):
        TweetRecord.from_dict(dict(GOOD, urls=[1, 2]))


def test_store_round_trip(tmp_path):
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, GOOD2])
    store = ingest(path)
    store.write(tmp_path / "store")
    loaded = TweetStore.load(tmp_path / "store")
    assert [r.post_id for r in loaded.records] == \
        [r.post_id for r in store.records]
    assert loaded.counters == store.counters


def test_post_rows_shapes(tmp_path):
    path = _write_jsonl(tmp_path / "in.jsonl", [GOOD, GOOD2])
    rows = ingest(path).post_rows()
    tw = next(r for r in rows if r["post_id"] == "p1")
    rt = next(r for r in rows if r["post_id"] == "p2")
    assert "retweeter_id" not in tw
    assert rt["retweeter_id"] == "bob" and rt["author_id"] == "alice"


# --- graph builders ------------------------------------------------------------------

def _store(*rows):
    return TweetStore([TweetRecord.from_dict(r) for r in rows])


def test_verified_bipartite_from_unverified_retweeter():
    store = _store(GOOD, GOOD2)  # unverified bob retweets verified alice
    g, stats = build_verified_bipartite(store)
    assert g.edge_list() == [("alice", "bob")]
    assert stats["edges"] == 1


def test_verified_bipartite_reverse_direction_same_edge():
    original = {"post_id": "p1", "author_id": "bob", "author_verified": False,
                "timestamp": 1, "urls": []}
    rt = {"post_id": "p2", "author_id": "alice", "author_verified": True,
          "timestamp": 2, "urls": [], "retweet_of": "p1"}
    g, _ = build_verified_bipartite(_store(original, rt))
    assert g.edge_list() == [("alice", "bob")]


def test_verified_bipartite_same_layer_retweets_counted():
    v2 = {"post_id": "p3", "author_id": "vera", "author_verified": True,
          "timestamp": 3, "urls": [], "retweet_of": "p1"}
    store = _store(GOOD, GOOD2, v2)  # vera (verified) retweets alice (verified)
    g, stats = build_verified_bipartite(store)
    assert stats["verified_verified"] == 1
    assert g.n_edges == 1


def test_verified_bipartite_requires_verified_users():
    rows = [dict(GOOD, author_verified=False)]
    with pytest.raises(PipelineError, match="no verified users"):
        build_verified_bipartite(_store(*rows))


def test_verified_bipartite_orphan_retweets_counted():
    orphan = {"post_id": "p5", "author_id": "carl", "author_verified": False,
              "timestamp": 5, "urls": [], "retweet_of": "missing"}
    store = _store(GOOD, GOOD2, orphan)
    _, stats = build_verified_bipartite(store)
    assert stats["orphan_retweets"] == 1


def test_user_post_bipartite_counts():
    rt2 = {"post_id": "p3", "author_id": "carol", "author_verified": False,
           "timestamp": 3, "urls": [], "retweet_of": "p1"}
    g, stats = build_user_post_bipartite(_store(GOOD, GOOD2, rt2))
    assert len(g.block_m) == 1   # one original
    assert len(g.block_n) == 2   # two resharers
    assert stats["originals"] == 1 and stats["retweets"] == 2


def test_user_post_bipartite_drops_self_retweet():
    self_rt = {"post_id": "p4", "author_id": "alice", "author_verified": True,
               "timestamp": 4, "urls": [], "retweet_of": "p1"}
    g, stats = build_user_post_bipartite(_store(GOOD, self_rt))
    assert stats["self_retweets"] == 1
    assert len(g.block_n) == 0


def test_user_post_bipartite_orphan_becomes_stub_count():
    orphan = {"post_id": "p6", "author_id": "dan", "author_verified": False,
              "timestamp": 6, "urls": [], "retweet_of": "ghost"}
    g, stats = build_user_post_bipartite(_store(GOOD, orphan))
    assert stats["stub_retweets"] == 1
    # the unknown post never enters the graph
    assert g.n_right == 1


def test_user_post_bipartite_resolves_retweet_chains():
    rt_of_rt = {"post_id": "p3", "author_id": "carol",
                "author_verified": False, "timestamp": 3, "urls": [],
                "retweet_of": "p2"}
    g, stats = build_user_post_bipartite(_store(GOOD, GOOD2, rt_of_rt))
    # carol's reshare of bob's reshare lands on alice's original
    carol = g.left_index["carol"]
    assert g.right_ids[next(iter(g.retweeted_by(carol)))] == "p1"


# --- config -------------------------------------------------------------------------

def test_load_config_full(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text("""
[run]
input = "tweets.jsonl"
annotations = "ann.csv"
output_dir = "out"
seed = 9

[projection]
alpha = 0.01
fdr_family = "all-pairs"

[communities]
restarts = 25

[reputability]
min_occurrence_verified = 5
min_occurrence_directed = 7
keep_subdomains = true
""")
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.alpha == 0.01
    assert cfg.fdr_family == "all-pairs"
    assert cfg.restarts == 25
    assert cfg.keep_subdomains is True
    assert cfg.min_occurrence_directed == 7


def test_load_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text('[run]\ninput="a"\nannotations="b"\noutput_dir="c"\n'
                 'typo_key=1\n')
    with pytest.raises(ValidationError, match="unknown config key"):
        load_config(p)


def test_load_config_requires_core_keys(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text('[run]\ninput="a"\n')
    with pytest.raises(ValidationError, match="required"):
        load_config(p)


def test_config_validation_bounds():
    cfg = PipelineConfig(input_path="x", annotations_path="y", output_dir="z",
                         alpha=2.0)
    with pytest.raises(ValidationError):
        cfg.validate()


def test_stage_seed_stable_and_distinct():
    assert stage_seed(42, "communities") == stage_seed(42, "communities")
    assert stage_seed(42, "communities") != stage_seed(42, "propagation")
    assert stage_seed(42, "communities") != stage_seed(43, "communities")


# --- end to end -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    cfg = SynthConfig(n_communities=3, verified_per_community=8,
                      unverified_per_community=50, seed=19,
                      nr_propensity=(0.3, 0.05, 0.02))
    paths = write_fixture(root, cfg)
    return paths


def _run_config(paths, out_dir, seed=19) -> PipelineConfig:
    cfg = load_config(paths["config"])
    cfg.output_dir = str(out_dir)
    cfg.seed = seed
    cfg.min_occurrence_verified = 5
    cfg.min_occurrence_directed = 5
    return cfg


def test_full_pipeline_completes(small_fixture, tmp_path):
    cfg = _run_config(small_fixture, tmp_path / "run")
    manifest = run_full_pipeline(cfg)
    names = [s["name"] for s in manifest.stages]
    assert names == list(__import__("nullnet.pipeline",
                                    fromlist=["STAGES"]).STAGES)
    out = Path(cfg.output_dir)
    assert (out / "manifest.json").exists()
    assert (out / "reports" / "timeseries.csv").exists()
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["partial"] is False
    for stage in doc["stages"]:
        for rel, digest in stage["outputs"].items():
            assert sha256_file(out / rel) == digest


def test_pipeline_rerun_is_byte_identical(small_fixture, tmp_path):
    cfg_a = _run_config(small_fixture, tmp_path / "a")
    cfg_b = _run_config(small_fixture, tmp_path / "b")
    run_full_pipeline(cfg_a)
    run_full_pipeline(cfg_b)
    reports_a = sorted((Path(cfg_a.output_dir) / "reports").glob("*.csv"))
    assert reports_a
    for pa in reports_a:
        pb = Path(cfg_b.output_dir) / "reports" / pa.name
        assert pa.read_bytes() == pb.read_bytes()


def test_pipeline_resume_regenerates_identical_outputs(small_fixture, tmp_path):
    cfg = _run_config(small_fixture, tmp_path / "resume")
    first = run_full_pipeline(cfg)
    recorded = {}
    for stage in first.stages:
        if stage["name"] in ("communities", "directed_graph", "bidcm",
                             "directed_projection", "propagation", "hits",
                             "reports"):
            recorded.update(stage["outputs"])
    out = Path(cfg.output_dir)
    for rel in recorded:
        (out / rel).unlink()
    second = run_full_pipeline(cfg, from_stage="communities")
    regenerated = {}
    for stage in second.stages:
        regenerated.update(stage["outputs"])
    assert set(recorded) == set(regenerated)
    for rel, digest in recorded.items():
        assert regenerated[rel] == digest, rel


def test_pipeline_stage_failure_leaves_partial_manifest(small_fixture,
                                                        tmp_path):
    cfg = _run_config(small_fixture, tmp_path / "fail")
    cfg.annotations_path = str(tmp_path / "missing.csv")
    with pytest.raises(PipelineError) as err:
        run_full_pipeline(cfg)
    assert err.value.stage == "reports"
    doc = json.loads((Path(cfg.output_dir) / "manifest.json").read_text())
    assert doc["partial"] is True
    assert [s["name"] for s in doc["stages"]] == [
        "ingest", "verified_graph", "bicm", "undirected_projection",
        "communities", "directed_graph", "bidcm", "directed_projection",
        "propagation", "hits"]


def test_report_conservation_audit(small_fixture, tmp_path):
    cfg = _run_config(small_fixture, tmp_path / "audit")
    run_full_pipeline(cfg)
    store = TweetStore.load(Path(cfg.output_dir) / "store")
    annotations = load_annotations(cfg.annotations_path)
    truth = {}
    with open(small_fixture["ground_truth"], encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            user, communities = line.strip().split(",")
            truth[user] = communities
    reports = aggregate_reputability(store.post_rows(), truth, annotations,
                                     min_occurrence=5)
    assert verify_report_conservation(store.post_rows(), reports)


def test_unknown_stage_rejected(small_fixture, tmp_path):
    cfg = _run_config(small_fixture, tmp_path / "x")
    with pytest.raises(ValidationError):
        run_full_pipeline(cfg, from_stage="nonsense")
    with pytest.raises(ValidationError):
        run_full_pipeline(cfg, only=["nonsense"])


# --- CLI ----------------------------------------------------------------------------------

def test_cli_synth_and_run(tmp_path):
    runner = CliRunner()
    res = runner.invoke(cli_main, ["synth", "--out", str(tmp_path / "fx"),
                                   "--seed", "3", "--communities", "3",
                                   "--verified", "6", "--unverified", "30"])
    assert res.exit_code == 0, res.output
    config = tmp_path / "fx" / "config.toml"
    assert config.exists()
    # make occurrence thresholds fit the small corpus
    text = config.read_text().replace("min_occurrence_verified = 20",
                                      "min_occurrence_verified = 5")
    text = text.replace("min_occurrence_directed = 20",
                        "min_occurrence_directed = 5")
    config.write_text(text)
    res = runner.invoke(cli_main, ["run", "--config", str(config)])
    assert res.exit_code == 0, res.output
    assert "[reports] done" in res.output


def test_cli_project_standalone(tmp_path):
    from nullnet.graph import write_bipartite_csv
    from nullnet.synth import planted_bipartite
    g, _ = planted_bipartite(20, 500, 0.3, 0.01, seed=3)
    src = write_bipartite_csv(g, tmp_path / "g.csv")
    out = tmp_path / "proj.csv"
    runner = CliRunner()
    res = runner.invoke(cli_main, ["project", "--input", str(src),
                                   "--alpha", "0.05", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert out.exists()
    assert "validated" in res.output


def test_cli_validation_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[run]\ninput="x"\n')
    runner = CliRunner()
    res = runner.invoke(cli_main, ["run", "--config", str(bad)])
    assert res.exit_code == 2


def test_cli_stage_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfg.toml"
    missing = tmp_path / "missing.jsonl"
    missing.write_text('{"post_id": "p", "author_id": "a"}\n')  # malformed
    ann = tmp_path / "ann.csv"
    ann.write_text("domain,score,label,source\nrep.it,80,,\n")
    cfg.write_text(f'[run]\ninput="{missing}"\nannotations="{ann}"\n'
                   f'output_dir="{tmp_path / "out"}"\n')
    runner = CliRunner()
    res = runner.invoke(cli_main, ["run", "--config", str(cfg)])
    assert res.exit_code == 3
