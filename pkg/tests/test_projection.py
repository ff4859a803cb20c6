import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullnet.errors import GraphError, ValidationError
from nullnet.graph import BipartiteGraph, build_bipartite, build_directed_bipartite
from nullnet.nullmodel import fit_bicm, fit_bidcm, fit_chung_lu
from nullnet.projection import (
    count_directed_v_motifs,
    count_v_motifs,
    expected_v_motifs,
    fdr_select,
    motif_p_value,
    poisson_binomial_pmf,
    read_projection_csv,
    sample_from_null,
    validate_projection,
    write_projection_csv,
)
from nullnet.synth import planted_bipartite


# --- motif counts ---------------------------------------------------------------

def test_disjoint_neighborhoods_zero_overlap():
    g = BipartiteGraph.from_indices(2, 4, [(0, 0), (0, 1), (1, 2), (1, 3)])
    assert count_v_motifs(g, 0, 1) == 0


def test_identical_neighborhoods_full_overlap():
    g = BipartiteGraph.from_indices(2, 4, [(i, a) for i in (0, 1)
                                           for a in range(4)])
    assert count_v_motifs(g, 0, 1) == 4


def test_overlap_fixture_hand_count():
    # A and B share x and y but not z or w; C shares only x with both
    g = build_bipartite([("A", "x"), ("A", "y"), ("A", "z"),
                         ("B", "x"), ("B", "y"), ("B", "w"),
                         ("C", "x")])
    ia, ib, ic = (g.left_index[n] for n in "ABC")
    assert count_v_motifs(g, ia, ib) == 2
    assert count_v_motifs(g, ia, ic) == 1
    assert count_v_motifs(g, ib, ic) == 1


def test_v_motifs_same_node_rejected():
    g = BipartiteGraph.from_indices(2, 2, [(0, 0)])
    with pytest.raises(GraphError):
        count_v_motifs(g, 1, 1)


def test_v_motifs_symmetric():
    g = build_bipartite([("A", "x"), ("A", "y"), ("B", "y"), ("B", "z")])
    assert count_v_motifs(g, 0, 1) == count_v_motifs(g, 1, 0)


def _directed_fixture():
    # u1 authors 5 posts; u2 reshares 3 of them and authors p5 which u1
    # does not reshare -> flow(u1->u2) = 3, flow(u2->u1) = 0
    authors = [("u1", f"p{k}") for k in range(5)] + [("u2", "p5")]
    retweets = [("u2", "p0"), ("u2", "p1"), ("u2", "p2")]
    return build_directed_bipartite(authors, retweets)


def test_directed_motifs_basic_and_asymmetric():
    g = _directed_fixture()
    i, j = g.left_index["u1"], g.left_index["u2"]
    assert count_directed_v_motifs(g, i, j) == 3
    assert count_directed_v_motifs(g, j, i) == 0


def test_directed_motifs_no_flow():
    g = build_directed_bipartite([("u1", "p1"), ("u2", "p2")],
                                 [("u1", "p2")])
    i, j = g.left_index["u1"], g.left_index["u2"]
    assert count_directed_v_motifs(g, i, j) == 0


def test_directed_motifs_asymmetry_two_vs_zero():
    authors = [("a", "p1"), ("a", "p2"), ("b", "p3")]
    retweets = [("b", "p1"), ("b", "p2")]
    g = build_directed_bipartite(authors, retweets)
    ia, ib = g.left_index["a"], g.left_index["b"]
    assert count_directed_v_motifs(g, ia, ib) == 2
    assert count_directed_v_motifs(g, ib, ia) == 0


# --- expected motif counts ---------------------------------------------------------

def test_expected_directed_closed_form():
    g = _directed_fixture()
    params = fit_bidcm(g, retweet_mode="chung-lu")
    i, j = g.left_index["u1"], g.left_index["u2"]
    # k_out(u1) = 5, k_in(u2) = 3, 6 posts
    assert expected_v_motifs(params, i, j) == pytest.approx(5 * 3 / 6)


def test_expected_zero_degree_is_zero():
    g = _directed_fixture()
    params = fit_bidcm(g, retweet_mode="chung-lu")
    j = g.left_index["u1"]  # u1 reshared nothing
    i = g.left_index["u2"]
    assert expected_v_motifs(params, i, j) == 0.0


def test_expected_undirected_uniform_half():
    # uniform p = 0.5 over 4 shared posts -> 4 * 0.25 = 1.0
    edges = [(i, (i + k) % 4) for i in range(4) for k in (0, 1)]
    g = BipartiteGraph.from_indices(4, 4, edges)
    params = fit_bicm(g)
    assert expected_v_motifs(params, 0, 1) == pytest.approx(1.0, abs=1e-6)


# --- p-values ------------------------------------------------------------------------

def test_pvalue_observed_zero_is_one():
    assert motif_p_value(0, poisson_mean=5.0) == 1.0
    assert motif_p_value(0, probabilities=[0.2, 0.3],
                         mode="poisson_binomial") == 1.0


def test_pvalue_poisson_closed_form():
    # P(X >= 3 | lambda=1) = 1 - e^-1 (1 + 1 + 1/2)
    expect = 1.0 - math.exp(-1.0) * 2.5
    assert motif_p_value(3, poisson_mean=1.0) == pytest.approx(expect, abs=1e-12)


def test_pvalue_poisson_binomial_both_links():
    assert motif_p_value(2, probabilities=[0.5, 0.5],
                         mode="poisson_binomial") == pytest.approx(0.25)


def test_pvalue_negative_observed_rejected():
    with pytest.raises(ValidationError):
        motif_p_value(-1, poisson_mean=1.0)


def test_pvalue_monotone_in_observed():
    for lam in (0.5, 2.0, 7.3):
        tails = [motif_p_value(k, poisson_mean=lam) for k in range(15)]
        assert all(a >= b for a, b in zip(tails, tails[1:]))
    probs = [0.1, 0.3, 0.5, 0.2]
    tails = [motif_p_value(k, probabilities=probs, mode="poisson_binomial")
             for k in range(6)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))


def _enumeration_tail(probs, observed):
    """Brute-force oracle: sum over all outcome subsets with >= observed hits."""
    total = 0.0
    n = len(probs)
    for bits in itertools.product((0, 1), repeat=n):
        if sum(bits) < observed:
            continue
        p = 1.0
        for b, q in zip(bits, probs):
            p *= q if b else (1 - q)
        total += p
    return total


def test_poisson_binomial_matches_enumeration_oracle():
    rng = np.random.default_rng(23)
    for _ in range(25):
        n = int(rng.integers(1, 11))
        probs = rng.random(n) * 0.8
        observed = int(rng.integers(0, n + 1))
        exact = motif_p_value(observed, probabilities=probs,
                              mode="poisson_binomial")
        assert exact == pytest.approx(_enumeration_tail(probs, observed),
                                      abs=1e-10)


# Families shaped like real motif tests: each per-post event probability is
# the product of two link probabilities from a sparse null (so every event
# probability stays at or below 0.0484 << 0.1, where the Poisson tail is
# within 0.01 of the exact one for any family of up to 20 events).
@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(min_value=0.0, max_value=0.22),
                          st.floats(min_value=0.0, max_value=0.22)),
                min_size=1, max_size=20),
       st.integers(min_value=0, max_value=20))
def test_poisson_approximation_close_to_exact(link_prob_pairs, observed):
    probs = [a * b for a, b in link_prob_pairs]
    assert max(probs) <= 0.1
    exact = motif_p_value(observed, probabilities=probs,
                          mode="poisson_binomial")
    approx = motif_p_value(observed, poisson_mean=float(np.sum(probs)))
    assert abs(exact - approx) <= 0.01


def test_pmf_sums_to_one():
    pmf = poisson_binomial_pmf([0.2, 0.7, 0.05])
    assert pmf.sum() == pytest.approx(1.0)


# --- FDR -----------------------------------------------------------------------------

def test_fdr_hand_executed_example():
    pairs = [("a", 0.001), ("b", 0.02), ("c", 0.2), ("d", 0.9)]
    # thresholds at alpha=0.05 over m=4: 0.0125, 0.025, 0.0375, 0.05
    assert fdr_select(pairs, alpha=0.05) == {"a", "b"}


def test_fdr_nothing_significant():
    assert fdr_select([("a", 1.0), ("b", 1.0)], alpha=0.05) == set()


def test_fdr_single_small_p():
    assert fdr_select([("a", 0.01)], alpha=0.05) == {"a"}


def test_fdr_empty_family_rejected():
    with pytest.raises(ValidationError):
        fdr_select([], alpha=0.05)


def test_fdr_bad_alpha():
    with pytest.raises(ValidationError):
        fdr_select([("a", 0.5)], alpha=0.0)


def test_fdr_family_size_extension():
    # the same p-value that passes alone fails inside a big family of ones
    assert fdr_select([("a", 0.04)], alpha=0.05) == {"a"}
    assert fdr_select([("a", 0.04)], alpha=0.05, family_size=100) == set()


@given(st.lists(st.floats(min_value=1e-9, max_value=1.0), min_size=1,
                max_size=60))
@settings(max_examples=100, deadline=None)
def test_fdr_contains_bonferroni(pvals):
    family = list(enumerate(pvals))
    alpha = 0.05
    bh = fdr_select(family, alpha)
    bonferroni = {k for k, p in family if p <= alpha / len(family)}
    assert bonferroni <= bh


# --- validated projection -------------------------------------------------------------

def test_extreme_contrast_validates_exactly_one_pair():
    # a and b share 8 posts; eight other users hold two exclusive posts each
    edges = []
    for a in range(8):
        edges += [(0, a), (1, a)]
    for k in range(8):
        edges += [(2 + k, 8 + 2 * k), (2 + k, 9 + 2 * k)]
    g = BipartiteGraph.from_indices(10, 24, edges)
    proj = validate_projection(g, fit_bicm(g), alpha=0.05)
    assert proj.rejected_count == 1
    assert proj.edges[0].pair == (g.left_ids[0], g.left_ids[1])
    assert proj.edges[0].observed == 8
    assert proj.isolated_dropped == 8


def test_planted_blocks_recovered_as_components():
    g, blocks = planted_bipartite(20, 500, p_within=0.3, p_cross=0.01, seed=3)
    proj = validate_projection(g, fit_bicm(g), alpha=0.05)
    G = nx.Graph()
    G.add_nodes_from(proj.node_ids)
    G.add_edges_from(e.pair for e in proj.edges)
    comps = list(nx.connected_components(G))
    assert len(comps) >= 2
    for comp in comps:
        assert len({blocks[n] for n in comp}) == 1


def test_projection_symmetric_in_pair_order():
    g, _ = planted_bipartite(20, 500, p_within=0.3, p_cross=0.01, seed=9)
    proj = validate_projection(g, fit_bicm(g), alpha=0.05)
    assert proj.rejected_count > 0
    for e in proj.edges:
        assert e.pair[0] < e.pair[1]
        i, j = g.left_index[e.pair[0]], g.left_index[e.pair[1]]
        assert count_v_motifs(g, i, j) == count_v_motifs(g, j, i) == e.observed


def test_projection_pvalues_below_bh_threshold():
    g, _ = planted_bipartite(10, 300, p_within=0.3, p_cross=0.02, seed=4)
    proj = validate_projection(g, fit_bicm(g), alpha=0.05)
    assert proj.rejected_count > 0
    bh_threshold = proj.rejected_count * proj.fdr_alpha / proj.family_size
    for e in proj.edges:
        assert e.p_value <= bh_threshold + 1e-15


def test_directed_projection_without_retweets_is_edgeless():
    g = build_directed_bipartite([("u1", "p1"), ("u2", "p2")], [])
    proj = validate_projection(g, fit_bidcm(g), alpha=0.05)
    assert proj.directed
    assert proj.edges == ()
    assert proj.tested_count == 0


def test_directed_projection_flow_orientation():
    # u2 heavily reshares u1: expect validated edge u1 -> u2 only
    authors = [("u1", f"p{k}") for k in range(10)] + \
        [(f"w{k}", f"q{k}") for k in range(10)]
    retweets = [("u2", f"p{k}") for k in range(10)] + \
        [(f"w{(k + 1) % 10}", f"q{k}") for k in range(10)]
    g = build_directed_bipartite(authors, retweets)
    proj = validate_projection(g, fit_bidcm(g), alpha=0.05)
    assert ("u1", "u2") in {e.pair for e in proj.edges}
    assert ("u2", "u1") not in {e.pair for e in proj.edges}


def test_mismatched_graph_and_params_rejected():
    g = BipartiteGraph.from_indices(2, 3, [(0, 0), (1, 1)])
    dg = build_directed_bipartite([("u1", "p1")], [])
    with pytest.raises(ValidationError):
        validate_projection(g, fit_bidcm(dg))


def test_all_pairs_family_is_more_conservative():
    g, _ = planted_bipartite(10, 120, p_within=0.35, p_cross=0.05, seed=12)
    params = fit_bicm(g)
    nonzero = validate_projection(g, params, alpha=0.05, fdr_family="nonzero")
    allpairs = validate_projection(g, params, alpha=0.05,
                                   fdr_family="all-pairs")
    assert allpairs.family_size == g.n_left * (g.n_left - 1) // 2
    rejected_all = {e.pair for e in allpairs.edges}
    rejected_nz = {e.pair for e in nonzero.edges}
    assert rejected_all <= rejected_nz


def test_poisson_binomial_mode_close_to_poisson_on_sparse_graph():
    g, _ = planted_bipartite(6, 150, p_within=0.15, p_cross=0.02, seed=21)
    params = fit_bicm(g)
    pois = validate_projection(g, params, alpha=0.05, mode="poisson")
    exact = validate_projection(g, params, alpha=0.05, mode="poisson_binomial")
    p_pois = {e.pair: e.p_value for e in pois.edges}
    p_exact = {e.pair: e.p_value for e in exact.edges}
    for pair in set(p_pois) & set(p_exact):
        assert abs(p_pois[pair] - p_exact[pair]) < 0.02


def test_validation_of_null_samples_controls_fdr_small():
    # small-scale version of the acceptance criterion: graphs sampled from
    # their own fitted null produce almost no validated pairs
    rng = np.random.default_rng(31)
    base, _ = planted_bipartite(15, 150, p_within=0.12, p_cross=0.12, seed=2)
    params = fit_bicm(base)
    fractions = []
    for _ in range(10):
        sampled = sample_from_null(params, rng)
        refit = fit_bicm(sampled)
        proj = validate_projection(sampled, refit, alpha=0.05)
        fractions.append(proj.rejected_count / max(proj.tested_count, 1))
    assert np.mean(fractions) <= 0.05 + 2 * np.std(fractions) / np.sqrt(10) + 1e-9


def test_projection_csv_round_trip(tmp_path):
    g, _ = planted_bipartite(20, 500, p_within=0.3, p_cross=0.01, seed=3)
    proj = validate_projection(g, fit_bicm(g), alpha=0.05)
    assert proj.rejected_count > 0
    path = write_projection_csv(proj, tmp_path / "proj.csv")
    loaded = read_projection_csv(path)
    assert loaded.node_ids == proj.node_ids
    assert loaded.directed == proj.directed
    assert len(loaded.edges) == len(proj.edges)
    assert loaded.edges[0].p_value == pytest.approx(proj.edges[0].p_value)


def test_chung_lu_projection_matches_dense_path():
    # the capped==0 closed form must agree with the dense matrix product
    g, _ = planted_bipartite(12, 300, p_within=0.2, p_cross=0.02, seed=14)
    params = fit_chung_lu(g, sparse_threshold=1.0)
    assert params.capped_pairs == 0
    from nullnet.nullmodel import probability_matrix
    from nullnet.projection import _observed_pairs_undirected, _expected_undirected
    pairs = sorted(_observed_pairs_undirected(g))
    lam_fast = _expected_undirected(params, pairs)
    P = probability_matrix(params)
    lam_dense = np.array([(P[i] * P[j]).sum() for i, j in pairs])
    assert np.allclose(lam_fast, lam_dense, atol=1e-10)
