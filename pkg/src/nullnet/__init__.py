"""Effective interaction networks from noisy bipartite data.

Builds bipartite representations of retweet activity, fits maximum-entropy
null models that preserve degree sequences on average, keeps only the
statistically validated interactions, partitions them into discursive
communities, and quantifies how much traffic from not-reputable news
sources each community carries.
"""

from .communities import (
    HubScores,
    LabelAssignment,
    Partition,
    hits_scores,
    louvain_best,
    modularity,
    propagate_labels,
    subcommunities,
)
from .errors import (
    ConvergenceError,
    FitError,
    GraphError,
    NullnetError,
    PipelineError,
    ValidationError,
)
from .graph import (
    BipartiteGraph,
    DirectedBipartiteGraph,
    build_bipartite,
    build_directed_bipartite,
    connectance,
    degrees,
)
from .nullmodel import (
    BicmParams,
    BidcmParams,
    bicm_link_probability,
    fit_auto,
    fit_bicm,
    fit_bidcm,
    fit_chung_lu,
)
from .pipeline import (
    PipelineConfig,
    RunManifest,
    TweetRecord,
    TweetStore,
    build_user_post_bipartite,
    build_verified_bipartite,
    ingest,
    load_config,
    run_full_pipeline,
)
from .projection import (
    MotifStatistics,
    ValidatedProjection,
    count_directed_v_motifs,
    count_v_motifs,
    expected_v_motifs,
    fdr_select,
    motif_p_value,
    validate_projection,
)
from .reputability import (
    CommunityReport,
    DomainAnnotation,
    ReputabilityLabel,
    aggregate_reputability,
    extract_domain,
    fleiss_kappa,
    nr_share_report,
    score_to_label,
    timeseries_report,
)

__version__ = "0.1.0"
