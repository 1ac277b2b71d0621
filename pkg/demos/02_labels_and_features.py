"""From raw interaction logs to training labels and features.

Walks the label pipeline on a handful of hand-written sessions: deepest
action per session, funnel counts, corpus-calibrated weights, the scalar
engagement label, and per-query max normalization onto [0, 4]. Then
shows the temporal feature machinery: lookback aggregates, velocity, and
decayed engagement features.

Run: python demos/02_labels_and_features.py
"""

from channelrank import (
    Action,
    CorpusStats,
    InteractionEvent,
    LookbackConfig,
    calibrate_weights,
    deepest_action,
    engagement_features,
    funnel_counts,
    lookback_aggregates,
    normalize_labels,
    raw_label,
    velocity,
)
from channelrank.labeling import WEEK_SECONDS


def ev(session, action, week=3, item="desk-oak", offset=60.0):
    return InteractionEvent(
        query="standing desk", item=item, session=session, week=week,
        action=action, timestamp=week * WEEK_SECONDS + offset,
    )


print("=== deepest action per session ===")
session_a = [ev("s1", Action.IMPRESSION), ev("s1", Action.CLICK), ev("s1", Action.ADD_TO_CART)]
session_b = [ev("s2", Action.IMPRESSION)]
print("session s1 (imp, click, atc) ->", deepest_action(session_a).name)
print("session s2 (imp only)        ->", deepest_action(session_b).name)

print("\n=== weekly funnel counts for one (query, item) ===")
week_events = (
    session_a + session_b
    + [ev("s3", Action.IMPRESSION), ev("s3", Action.CLICK)]
    + [ev("s4", Action.IMPRESSION), ev("s4", Action.CLICK),
       ev("s4", Action.ADD_TO_CART), ev("s4", Action.PURCHASE)]
)
fc = funnel_counts(week_events)
print(f"views={fc.views} clicks={fc.clicks} atcs={fc.atcs} purchases={fc.purchases} "
      f"({fc.n_sessions} sessions)")

print("\n=== corpus-calibrated label weights ===")
stats = CorpusStats(total_purchases=100, total_atcs=400, total_clicks=2000)
weights = calibrate_weights(stats)
print(f"corpus (P={stats.total_purchases}, A={stats.total_atcs}, C={stats.total_clicks})"
      f" -> weights (a, b, c, d) = ({weights.a}, {weights.b}, {weights.c}, {weights.d})")
print("rarer, deeper actions earn larger weights; views earn zero")

print("\n=== scalar label and per-query normalization ===")
pool_counts = {
    "desk-oak": fc,
    "desk-pro": funnel_counts(
        [ev("t1", Action.IMPRESSION, item="desk-pro"),
         ev("t1", Action.CLICK, item="desk-pro")]
    ),
    "chair-ergo": funnel_counts([], query="standing desk", item="chair-ergo", week=3),
}
raw = {item: raw_label(c, weights) for item, c in pool_counts.items()}
normalized = normalize_labels(raw)
for item in pool_counts:
    print(f"{item:>10}: raw={raw[item]:.3f}  normalized={normalized[item]:.3f}")

print("\n=== lookback aggregates and velocity for one item ===")
history = [
    ev("h1", Action.PURCHASE, week=0), ev("h2", Action.CLICK, week=1),
    ev("h3", Action.PURCHASE, week=2), ev("h4", Action.PURCHASE, week=3),
    ev("h5", Action.CLICK, week=3),
]
cfg = LookbackConfig(windows=(1, 4), decay_half_life=2.0)
agg = lookback_aggregates(history, as_of=4, cfg=cfg)
for window, counts in agg.items():
    print(f"window {window}w: impressions={counts.impressions} clicks={counts.clicks} "
          f"purchases={counts.purchases}")
v = velocity(agg[1].purchases, agg[4].purchases, 1, 4)
print(f"purchase velocity (1w rate vs 4w rate): {v:.2f}  (>1 means accelerating)")

print("\n=== decayed engagement features (same weights, no normalization) ===")
eng = engagement_features(history, as_of=4, weights=weights, cfg=cfg)
for window, value in eng.items():
    print(f"window {window}w: decayed engagement = {value:.4f}")
print("a purchase half_life weeks ago contributes weight * 0.5")
