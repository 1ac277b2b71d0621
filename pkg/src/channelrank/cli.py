"""Operator command line: generate, build-dataset, train, evaluate, ablate,
fuse, serve, bench.

Every subcommand validates flags, writes its outputs, and exits 0 on
success; runtime failures print one diagnostic line to stderr and exit 1;
usage errors exit 2 (argparse convention).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import synthgen
from .core import ChannelId, TruncationConfig, read_channel_lists
from .evaluation import AblationConfig, ablation_run
from .features import LookbackConfig
from .fusion import InterleaveWeights, rrf_fuse, weighted_interleave
from .gbdt.model import TrainParams, train, write_training_log
from .gbdt.serialize import load_model, save_model
from .labeling import read_event_log
from .metrics import GroupedNdcg
from .service import (
    DEFAULT_POOL_CAP,
    ItemFeatureTable,
    ScoreService,
    bench,
    make_server,
    synth_requests,
)


def _add_world_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--items", type=int, default=20000)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--weeks", type=int, default=5)
    p.add_argument("--n-per-channel", type=int, default=25)
    p.add_argument("--sessions-mean", type=float, default=40.0)
    p.add_argument("--trend-fraction", type=float, default=0.15)
    p.add_argument("--channel-concentration", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)


def _world_config(args: argparse.Namespace) -> synthgen.WorldConfig:
    return synthgen.WorldConfig(
        num_queries=args.queries,
        num_items=args.items,
        num_channels=args.channels,
        num_weeks=args.weeks,
        per_channel_n=args.n_per_channel,
        sessions_mean=args.sessions_mean,
        trend_fraction=args.trend_fraction,
        channel_utility_concentration=args.channel_concentration,
        seed=args.seed,
    )


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _world_config(args)
    world = synthgen.generate(cfg)
    paths = synthgen.write_world(world, args.out)
    catalog_path = os.path.join(args.out, "catalog.tsv")
    cat = world.ground_truth.catalog
    ds.write_item_catalog(
        catalog_path,
        ds.ItemCatalog(cat.item_vocab, cat.price, cat.category, cat.intro_week),
    )
    paths["catalog"] = catalog_path
    split = synthgen.filter_and_split(world.events, cfg.num_weeks)
    print(f"events: {len(world.events)} -> {paths['events']}")
    print(f"retention: {split.stats['retention']:.3f} "
          f"(train {split.stats['train_groups']}, valid {split.stats['valid_groups']}, "
          f"test {split.stats['test_groups']})")
    for key in sorted(paths):
        if key != "events":
            print(f"{key}: {paths[key]}")
    return 0


def _load_world_dir(
    events_path: str, lists_dir: str, catalog_path: str, num_channels_hint: int | None = None
):
    events = read_event_log(events_path)
    catalog = ds.read_item_catalog(catalog_path)
    weeks = sorted(
        int(name.split("_w")[-1].split(".")[0])
        for name in os.listdir(lists_dir)
        if name.startswith("channel_lists_w") and name.endswith(".tsv")
    )
    if not weeks:
        raise ValueError(f"no channel_lists_w*.tsv files under {lists_dir}")
    names: list[str] | None = None
    lists_by_week = {}
    for week in weeks:
        path = os.path.join(lists_dir, f"channel_lists_w{week}.tsv")
        loaded = read_channel_lists(path, channel_names=names)
        if names is None:
            any_query = next(iter(loaded.values()))
            names = [cl.channel.name for cl in any_query]
        lists_by_week[week] = loaded
    channels = tuple(ChannelId(i, name) for i, name in enumerate(names or []))
    return events, lists_by_week, catalog, channels


def _cmd_build_dataset(args: argparse.Namespace) -> int:
    events, lists_by_week, catalog, channels = _load_world_dir(
        args.events, args.lists_dir, args.catalog
    )
    num_weeks = max(lists_by_week) + 1
    split = synthgen.filter_and_split(
        events, num_weeks, min_impressions=args.min_impressions
    )
    lookback = LookbackConfig(
        windows=tuple(int(w) for w in args.windows.split(",")),
        decay_half_life=args.half_life,
    )
    trunc = TruncationConfig.uniform(channels, args.n_per_channel)
    data = ds.build_dataset(
        events, lists_by_week, catalog, channels, split.all_keys(), trunc,
        lookback=lookback, train_weeks=split.train_weeks,
    )
    ds.write_dataset(data, args.out, label_scheme=args.labels)
    print(f"instances: {len(data)} ({len(data.group_keys)} groups) -> {args.out}")
    print(f"schema: {args.out}.schema.json ({len(data.schema)} columns)")
    print(f"label weights ({args.labels}): {data.conversion_weights}")
    if args.item_features_out:
        _write_serving_item_features(args.item_features_out, data, events, catalog, lookback)
        print(f"item features: {args.item_features_out}")
    return 0


def _write_serving_item_features(path, data, events, catalog, lookback) -> None:
    """Item-group feature rows for every catalog item, as of the last week."""
    from .service import write_item_features

    as_of = int(events.week.max()) + 1
    item_cols = [c.name for c in data.schema.columns if c.group == "item"]
    frame = ds._recode_items(events, catalog)
    n_items = len(catalog.item_vocab)
    num_weeks = as_of
    counts = np.zeros((n_items, num_weeks, 4))
    np.add.at(counts, (frame.item, frame.week, frame.action), 1.0)
    cum = np.cumsum(counts, axis=1)

    def window_counts(window: int) -> np.ndarray:
        hi = as_of - 1
        lo = as_of - window - 1
        upper = cum[:, hi, :]
        if lo >= 0:
            return upper - cum[:, lo, :]
        return upper

    per_window = {w: window_counts(w) for w in lookback.windows}
    values: dict[str, list[float]] = {}
    from .labeling import Action
    from .features import VELOCITY_EPS

    for idx, item in enumerate(catalog.item_vocab):
        row: list[float] = []
        for name in item_cols:
            if name == "item_price":
                row.append(float(catalog.price[idx]))
            elif name == "item_category":
                row.append(float(catalog.category[idx]))
            elif name == "item_age_weeks":
                row.append(float(as_of - catalog.intro_week[idx]))
            elif name.startswith("item_") and "_w" in name:
                stat, window = name[len("item_"):].rsplit("_w", 1)
                action = {
                    "impressions": Action.IMPRESSION,
                    "clicks": Action.CLICK,
                    "atcs": Action.ADD_TO_CART,
                    "purchases": Action.PURCHASE,
                }[stat]
                row.append(float(per_window[int(window)][idx, int(action)]))
            elif name.endswith("_velocity"):
                stat = "purchases" if "purchase" in name else "clicks"
                action = Action.PURCHASE if "purchase" in name else Action.CLICK
                short, long_ = lookback.windows[0], lookback.windows[-1]
                s = float(per_window[short][idx, int(action)])
                l = float(per_window[long_][idx, int(action)])
                row.append(0.0 if s == 0 else (s / short) / ((l / long_) + VELOCITY_EPS))
            else:
                row.append(0.0)
        values[item] = row
    write_item_features(path, item_cols, values)


def _train_params(args: argparse.Namespace) -> TrainParams:
    return TrainParams(
        num_trees=args.trees,
        shrinkage=args.shrinkage,
        max_depth=args.depth,
        min_examples_per_leaf=args.min_leaf,
        l2=args.l2,
        ndcg_truncation=args.ndcg_k,
        oblique=args.oblique,
        seed=args.seed,
    )


def _add_train_flags(p: argparse.ArgumentParser, trees=300, depth=6) -> None:
    p.add_argument("--trees", type=int, default=trees)
    p.add_argument("--depth", type=int, default=depth)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--ndcg-k", type=int, default=8)
    p.add_argument("--oblique", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _cmd_train(args: argparse.Namespace) -> int:
    data = ds.read_dataset(args.data)
    max_week = int(data.weeks.max())
    valid_week = args.valid_week if args.valid_week is not None else max_week - 1
    train_mask = data.weeks < valid_week
    valid_mask = data.weeks == valid_week
    if not train_mask.any():
        raise ValueError(f"no training rows before week {valid_week}")
    params = _train_params(args)
    valid = None
    if valid_mask.any():
        valid = (
            data.X[valid_mask], data.labels[valid_mask], data.group_ids[valid_mask],
        )
    result = train(
        data.X[train_mask], data.labels[train_mask], data.group_ids[train_mask],
        data.schema, params, valid=valid, n_threads=args.threads,
    )
    save_model(result.model, args.out)
    last = result.history[-1]
    print(
        f"trained {params.num_trees} trees on {int(train_mask.sum())} rows; "
        f"train ndcg@{params.ndcg_truncation}={last.train_ndcg:.4f}"
        + (f" valid={last.valid_ndcg:.4f}" if last.valid_ndcg is not None else "")
    )
    print(f"model -> {args.out}")
    if args.log:
        write_training_log(result.history, args.log)
        print(f"training log -> {args.log}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    data = ds.read_dataset(args.data)
    week = args.week if args.week is not None else int(data.weeks.max())
    mask = data.weeks == week
    if not mask.any():
        raise ValueError(f"no rows for week {week}")
    model = load_model(args.model)
    if model.schema != data.schema:
        raise ValueError("model schema does not match dataset schema")
    scores = model.predict_matrix(data.X[mask])
    grouped = GroupedNdcg(data.labels[mask], data.group_ids[mask], k=args.k)
    mean = grouped.mean(scores)
    print(f"week {week}: mean ndcg@{args.k} = {mean:.4f} over "
          f"{grouped.group_count} groups")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(
                {"week": week, "k": args.k, "mean_ndcg": mean,
                 "groups": int(grouped.group_count)},
                fh, indent=2,
            )
        print(f"report -> {args.json}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    if args.config == "default":
        cfg = synthgen.WorldConfig(seed=args.seed)
        train_params = TrainParams(
            num_trees=150, shrinkage=0.15, max_depth=5,
            min_examples_per_leaf=10, l2=1.0, seed=7,
        )
    elif args.config == "small":
        cfg = synthgen.WorldConfig(
            num_queries=120, num_items=1500, universe_size=24, per_channel_n=12,
            sessions_mean=30.0, seed=args.seed,
        )
        train_params = TrainParams(
            num_trees=40, shrinkage=0.2, max_depth=4,
            min_examples_per_leaf=5, l2=1.0, seed=7,
        )
    else:
        raise ValueError(f"unknown ablation config {args.config!r}")
    world = synthgen.generate(cfg)
    split = synthgen.filter_and_split(world.events, cfg.num_weeks)
    cat = world.ground_truth.catalog
    catalog = ds.ItemCatalog(cat.item_vocab, cat.price, cat.category, cat.intro_week)
    trunc = TruncationConfig.uniform(world.channels, cfg.per_channel_n)
    data = ds.build_dataset(
        world.events, world.channel_lists, catalog, world.channels,
        split.all_keys(), trunc,
    )
    report = ablation_run(
        data, world.channel_lists, split,
        AblationConfig(train_params=train_params, wi_seeds=args.wi_seeds,
                       n_threads=args.threads),
    )
    print(report.render_text())
    os.makedirs(args.out_dir, exist_ok=True)
    json_path = os.path.join(args.out_dir, "ablation_report.json")
    text_path = os.path.join(args.out_dir, "ablation_report.txt")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(report.render_text() + "\n")
    print(f"report -> {json_path}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    by_query = read_channel_lists(args.lists)
    out_lines = []
    for query in sorted(by_query):
        lists = by_query[query]
        if args.method == "rrf":
            fused = rrf_fuse(lists, k_rrf=args.k_rrf)
            for rank, item in enumerate(fused.items, start=1):
                out_lines.append(f"{query}\t{item}\t{fused.scores[rank - 1]!r}")
        else:
            weights = _parse_weights(args.weight, lists)
            fused = weighted_interleave(lists, weights, seed=args.seed)
            for rank, item in enumerate(fused.items, start=1):
                out_lines.append(f"{query}\t{item}\t{rank}")
    body = "\n".join(out_lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body)
        print(f"fused {len(by_query)} queries -> {args.out}")
    else:
        sys.stdout.write(body)
    return 0


def _parse_weights(flags: list[str] | None, lists) -> InterleaveWeights:
    channels = {cl.channel.name: cl.channel for cl in lists}
    if not flags:
        return InterleaveWeights.uniform(list(channels.values()))
    weights = {}
    for flag in flags:
        if "=" not in flag:
            raise ValueError(f"--weight expects name=value, got {flag!r}")
        name, value = flag.split("=", 1)
        if name not in channels:
            raise ValueError(f"unknown channel {name!r} in --weight")
        weights[channels[name]] = float(value)
    for name, channel in channels.items():
        weights.setdefault(channel, 0.0)
    return InterleaveWeights(weights)


def _make_service(args: argparse.Namespace) -> ScoreService:
    model = load_model(args.model)
    table = ItemFeatureTable.from_file(args.items) if args.items else None
    pool_cap = int(os.environ.get("CHANNELRANK_POOL_CAP", args.pool_cap))
    return ScoreService(model, item_features=table, pool_cap=pool_cap)


def _cmd_serve(args: argparse.Namespace) -> int:
    service = _make_service(args)
    bind = os.environ.get("CHANNELRANK_BIND", args.bind)
    host, _, port = bind.partition(":")
    server = make_server(service, host=host or "127.0.0.1", port=int(port or 8351))
    print(f"serving model {service.fingerprint[:12]} on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    service = _make_service(args)
    item_ids = list(service._item_index) if service._item_index else None
    requests = synth_requests(
        service, args.requests, pool_items=args.pool, seed=args.seed,
        item_ids=item_ids,
    )
    report = bench(service, requests, url=args.url)
    print(report.render_text())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2)
        print(f"report -> {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="channelrank",
        description="Multi-channel learning-to-rank toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic multi-channel search log")
    _add_world_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("build-dataset", help="events + channel lists -> labeled instances")
    p.add_argument("--events", required=True)
    p.add_argument("--lists-dir", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", choices=["conversion", "heuristic"], default="conversion")
    p.add_argument("--windows", default="1,4")
    p.add_argument("--half-life", type=float, default=2.0)
    p.add_argument("--n-per-channel", type=int, default=25)
    p.add_argument("--min-impressions", type=int, default=20)
    p.add_argument("--item-features-out", default=None)
    p.set_defaults(func=_cmd_build_dataset)

    p = sub.add_parser("train", help="train the ranking model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-week", type=int, default=None)
    p.add_argument("--log", default=None)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a model file on a dataset week")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--week", type=int, default=None)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run the WI/UR/UR+EF/UR+EF+CL comparison")
    p.add_argument("--config", choices=["default", "small"], default="default")
    p.add_argument("--out-dir", default="ablation")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--wi-seeds", type=int, default=20)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("fuse", help="fuse channel lists with RRF or weighted interleaving")
    p.add_argument("--lists", required=True)
    p.add_argument("--method", choices=["rrf", "wi"], default="rrf")
    p.add_argument("--k-rrf", type=float, default=60.0)
    p.add_argument("--weight", action="append", default=None,
                   metavar="CHANNEL=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--model", required=True)
    p.add_argument("--items", default=None, help="item feature sidecar")
    p.add_argument("--bind", default="127.0.0.1:8351")
    p.add_argument("--pool-cap", type=int, default=DEFAULT_POOL_CAP)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="latency benchmark against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--items", default=None)
    p.add_argument("--requests", type=int, default=10000)
    p.add_argument("--pool", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--url", default=None, help="also bench a running server")
    p.add_argument("--json", default=None)
    p.add_argument("--pool-cap", type=int, default=DEFAULT_POOL_CAP)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
