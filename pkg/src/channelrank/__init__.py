"""channelrank: multi-channel learning-to-rank toolkit.

Merges candidates from heterogeneous retrieval channels, builds
conversion-weighted training labels over the impression -> click ->
add-to-cart -> purchase funnel, trains a pairwise-NDCG gradient-boosted
tree ranker, and compares it against rank-fusion baselines (RRF,
weighted interleaving) under a production-style latency budget.
"""

from .core import (
    CandidatePool,
    ChannelHit,
    ChannelId,
    ChannelList,
    ItemId,
    QueryId,
    TruncationConfig,
    WeekId,
    merge_pool,
    read_channel_lists,
    truncate,
    write_channel_lists,
)
from .fusion import FusedList, InterleaveWeights, rrf_fuse, weighted_interleave
from .labeling import (
    Action,
    CorpusStats,
    EventFrame,
    FunnelCounts,
    HEURISTIC_WEIGHTS,
    InteractionEvent,
    LabelWeights,
    calibrate_weights,
    deepest_action,
    funnel_counts,
    funnel_table,
    normalize_labels,
    raw_label,
    read_event_log,
    write_event_log,
)
from .features import (
    FeatureColumn,
    FeatureSchema,
    LookbackConfig,
    assemble_instance,
    build_schema,
    engagement_features,
    lookback_aggregates,
    velocity,
)
from .metrics import MetricConfig, ndcg_at_k, ndcg_from_scores
from .gbdt import (
    Model,
    TrainParams,
    TrainingError,
    delta_ndcg,
    lambda_gradients,
    load_model,
    save_model,
    train,
)
from .dataset import Dataset, ItemCatalog, build_dataset, read_dataset, write_dataset
from .evaluation import (
    AblationConfig,
    EvalReport,
    ModelRanker,
    RRFRanker,
    WIRanker,
    ablation_run,
    evaluate_variant,
)
from .synthgen import SplitPlan, WorldConfig, filter_and_split, generate
from .service import LatencyReport, ScoreService, bench, make_server

__version__ = "0.1.0"
