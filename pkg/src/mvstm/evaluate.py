"""Metrics, the historical-average baseline, and the experiment runner.

The runner trains each requested method on the train split, scores MAPE on
the held-out split, and aggregates over the configured seeds. Published
reference MAPE numbers ride along in the report footer purely as context:
they were measured on a proprietary large-scale dataset and are not
reproducible here.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, figures, graph2vec, model, roadgraph
from .dataio import Dataset, SyntheticConfig, Trajectory
from .errors import ConfigError, ValidationError
from .graph2vec import EmbeddingState, SkipgramConfig
from .model import TrainConfig

KNOWN_METHODS = ("simple_eta", "mvstm", "mvstm_no_spatial", "mvstm_rnn_only", "ensemble")

# published results on the original proprietary dataset, context only
REFERENCE_MAPE = {"mvstm": 0.12202, "wdr": 0.12831, "simple_eta": 0.16368}


def mape_metric(y_hat, y) -> float:
    """Mean of |prediction - actual| / actual over aligned lists."""
    if len(y_hat) != len(y):
        raise ValidationError(f"length mismatch: {len(y_hat)} vs {len(y)}")
    if not y:
        raise ValidationError("mape needs at least one pair")
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if (y <= 0).any():
        raise ValidationError("actual values must be positive")
    return float(np.sum(np.abs(y_hat - y) / y) / len(y))


@dataclass
class LinkTimeTable:
    """Historical mean times per link and crossing, with global-mean
    fallbacks for ids unseen in training."""

    link_means: dict[int, float]
    crossing_means: dict[int, float]
    global_link_mean: float
    global_crossing_mean: float


def build_link_time_table(train: Dataset) -> LinkTimeTable:
    if not train.trajectories:
        raise ValidationError("cannot build a link time table from an empty split")
    link_sums: dict[int, list[float]] = {}
    cross_sums: dict[int, list[float]] = {}
    for t in train.trajectories:
        for l in t.links:
            link_sums.setdefault(l.link_id, []).append(l.link_time)
        for c in t.crossings:
            cross_sums.setdefault(c.crossing_id, []).append(c.cross_time)
    all_link = [x for xs in link_sums.values() for x in xs]
    all_cross = [x for xs in cross_sums.values() for x in xs]
    return LinkTimeTable(
        link_means={k: float(np.mean(v)) for k, v in link_sums.items()},
        crossing_means={k: float(np.mean(v)) for k, v in cross_sums.items()},
        global_link_mean=float(np.mean(all_link)) if all_link else 0.0,
        global_crossing_mean=float(np.mean(all_cross)) if all_cross else 0.0,
    )


def simple_eta(table: LinkTimeTable, trajectory: Trajectory) -> float:
    """Sum of historical mean link times plus mean crossing times."""
    total = sum(
        table.link_means.get(l.link_id, table.global_link_mean)
        for l in trajectory.links
    )
    total += sum(
        table.crossing_means.get(c.crossing_id, table.global_crossing_mean)
        for c in trajectory.crossings
    )
    return float(total)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...] = ("simple_eta", "mvstm")
    seeds: tuple[int, ...] = (0,)
    train_fraction: float = 0.8
    synthetic: SyntheticConfig | None = SyntheticConfig()
    network_path: str | None = None
    trajectories_path: str | None = None
    manifest_path: str | None = None
    train: TrainConfig = TrainConfig()
    skipgram: SkipgramConfig = SkipgramConfig()
    walks_per_graph: int = 10
    walk_length: int = 8
    ensemble_weight: float = 0.9

    def __post_init__(self):
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(
                    f"unknown method {m!r}; choose from {', '.join(KNOWN_METHODS)}"
                )
        if not self.methods:
            raise ConfigError("no methods requested")
        if not self.seeds:
            raise ConfigError("no seeds given")
        if self.skipgram.delta != self.train.delta:
            raise ConfigError(
                f"skipgram delta {self.skipgram.delta} != model delta {self.train.delta}"
            )
        if self.synthetic is None and self.trajectories_path is None:
            raise ConfigError("need either a synthetic config or a trajectory file")


@dataclass
class MethodResult:
    name: str
    mape: float  # mean over seeds
    train_seconds: float  # mean over seeds
    per_seed: list[dict] = field(default_factory=list)
    trace: list[float] | None = None  # training trace of the last seed


@dataclass
class EvalReport:
    methods: list[MethodResult]
    dataset: dict
    seeds: list[int]
    config: dict
    paper_reference: dict


def _load_or_generate(config: ExperimentConfig, seed: int):
    if config.trajectories_path is not None:
        if config.manifest_path is None or config.network_path is None:
            raise ConfigError("file datasets need network, trajectory, and manifest paths")
        cards = dataio.load_manifest(config.manifest_path)
        dataset = dataio.parse_trajectories(config.trajectories_path, cards)
        network = dataio.parse_road_network(config.network_path)
        descriptor = {
            "source": str(config.trajectories_path),
            "trajectories": len(dataset),
            "nodes": network.vocab_size,
        }
    else:
        network, dataset = dataio.generate_synthetic(config.synthetic, seed)
        descriptor = {
            "source": "synthetic",
            "mode": config.synthetic.mode,
            "nodes": config.synthetic.nodes,
            "trajectories": config.synthetic.trajectories,
        }
    return network, dataset, descriptor


def _subset_embeddings(state: EmbeddingState, indices) -> EmbeddingState:
    return EmbeddingState(
        graph_vectors=state.graph_vectors[indices],
        node_vectors=state.node_vectors,
    )


def _run_seed(config: ExperimentConfig, seed: int, need: set[str]):
    """All requested method MAPEs for one seed."""
    network, dataset, descriptor = _load_or_generate(config, seed)
    train_idx, test_idx = dataio.split_indices(
        len(dataset.trajectories), config.train_fraction, seed
    )
    train_ds = Dataset([dataset.trajectories[i] for i in train_idx],
                       dict(dataset.cardinalities))
    test_ds = Dataset([dataset.trajectories[i] for i in test_idx],
                      dict(dataset.cardinalities))
    actuals = [t.actual_time for t in test_ds.trajectories]
    descriptor["split"] = [len(train_idx), len(test_idx)]

    results: dict[str, dict] = {}
    table = build_link_time_table(train_ds)
    simple_preds = [
        model.Prediction(index=i, eta=simple_eta(table, t))
        for i, t in enumerate(test_ds.trajectories)
    ]
    if "simple_eta" in need or "ensemble" in need:
        results["simple_eta"] = {
            "mape": mape_metric([p.eta for p in simple_preds], actuals),
            "train_seconds": 0.0,
            "trace": None,
        }

    neural = need & {"mvstm", "mvstm_no_spatial", "mvstm_rnn_only", "ensemble"}
    if neural:
        # embeddings are unsupervised, so they are fitted on the full set of
        # subgraphs and rows are subset per split
        corpus = roadgraph.build_corpus(
            network, dataset, config.train.hops,
            config.walks_per_graph, config.walk_length, seed,
        )
        sg_config = dataclasses.replace(config.skipgram, seed=seed)
        embeddings, _ = graph2vec.train(corpus, sg_config)
        emb_train = _subset_embeddings(embeddings, train_idx)
        emb_test = _subset_embeddings(embeddings, test_idx)
        model_config = dataclasses.replace(config.train, seed=seed)

        variants = {
            "mvstm": {},
            "mvstm_no_spatial": {"use_spatial": False},
            "mvstm_rnn_only": {"use_attention": False},
        }
        mvstm_preds = None
        for name, flags in variants.items():
            wanted = name in need or (name == "mvstm" and "ensemble" in need)
            if not wanted:
                continue
            start = time.perf_counter()
            params, trace = model.train(train_ds, emb_train, model_config, **flags)
            elapsed = time.perf_counter() - start
            preds = model.predict(params, emb_test, test_ds)
            if name == "mvstm":
                mvstm_preds = preds
            results[name] = {
                "mape": mape_metric([p.eta for p in preds], actuals),
                "train_seconds": elapsed,
                "trace": trace,
            }
        if "ensemble" in need:
            blended = model.ensemble(mvstm_preds, simple_preds, config.ensemble_weight)
            results["ensemble"] = {
                "mape": mape_metric([p.eta for p in blended], actuals),
                "train_seconds": results["mvstm"]["train_seconds"],
                "trace": None,
            }
    return results, descriptor


def run_experiment(config: ExperimentConfig) -> EvalReport:
    need = set(config.methods)
    per_seed: dict[str, list[dict]] = {m: [] for m in config.methods}
    traces: dict[str, list[float] | None] = {m: None for m in config.methods}
    descriptor = {}
    for seed in config.seeds:
        results, descriptor = _run_seed(config, seed, need)
        for m in config.methods:
            per_seed[m].append(
                {"seed": seed, "mape": results[m]["mape"],
                 "train_seconds": results[m]["train_seconds"]}
            )
            if results[m]["trace"] is not None:
                traces[m] = results[m]["trace"]

    methods = [
        MethodResult(
            name=m,
            mape=float(np.mean([r["mape"] for r in per_seed[m]])),
            train_seconds=float(np.mean([r["train_seconds"] for r in per_seed[m]])),
            per_seed=per_seed[m],
            trace=traces[m],
        )
        for m in config.methods
    ]
    return EvalReport(
        methods=methods,
        dataset=descriptor,
        seeds=list(config.seeds),
        config={
            "methods": list(config.methods),
            "train_fraction": config.train_fraction,
            "walks_per_graph": config.walks_per_graph,
            "walk_length": config.walk_length,
            "ensemble_weight": config.ensemble_weight,
            "train": dataclasses.asdict(config.train),
            "skipgram": dataclasses.asdict(config.skipgram),
            "synthetic": dataclasses.asdict(config.synthetic) if config.synthetic else None,
        },
        paper_reference={
            **REFERENCE_MAPE,
            "note": (
                "published reference values from the original proprietary "
                "large-scale dataset; context only, not reproducible here"
            ),
        },
    )


def report_to_dict(report: EvalReport, include_timing: bool) -> dict:
    return {
        "methods": [
            {
                "name": m.name,
                "mape": m.mape,
                "train_seconds": m.train_seconds if include_timing else None,
                "per_seed": [
                    {
                        "seed": r["seed"],
                        "mape": r["mape"],
                        **(
                            {"train_seconds": r["train_seconds"]}
                            if include_timing
                            else {}
                        ),
                    }
                    for r in m.per_seed
                ],
            }
            for m in report.methods
        ],
        "dataset": report.dataset,
        "seeds": report.seeds,
        "config": report.config,
        "paper_reference": report.paper_reference,
    }


def format_report_table(report: EvalReport, include_timing: bool) -> str:
    """Aligned text table plus the reference footer."""
    rows = [("method", "mape", "train_s")]
    for m in report.methods:
        rows.append(
            (
                m.name,
                f"{m.mape:.6f}",
                f"{m.train_seconds:.1f}" if include_timing else "-",
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"dataset: {json.dumps(report.dataset, sort_keys=True)}")
    lines.append(f"seeds:   {report.seeds}")
    ref = report.paper_reference
    lines.append(
        "reference (context only): "
        + ", ".join(f"{k}={ref[k]}" for k in sorted(REFERENCE_MAPE))
    )
    lines.append(f"  {ref['note']}")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, base_path, include_timing: bool = False) -> list[Path]:
    """Write the report as JSON, aligned text, delimited CSV, and figures.

    ``base_path`` is a stem: emits <stem>.json, <stem>.txt, <stem>.csv,
    <stem>_mape.png, and <stem>_traces.png when any method has a trace.
    Timing fields are nulled out by default so identical re-runs emit
    byte-identical files; pass include_timing=True to keep wall times.
    """
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = base.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report, include_timing), fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(json_path)

    txt_path = base.with_suffix(".txt")
    txt_path.write_text(format_report_table(report, include_timing), encoding="utf-8")
    written.append(txt_path)

    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("method,mape,train_seconds\n")
        for m in report.methods:
            timing = f"{m.train_seconds!r}" if include_timing else ""
            fh.write(f"{m.name},{m.mape!r},{timing}\n")
    written.append(csv_path)

    mape_png = base.parent / f"{base.stem}_mape.png"
    figures.save_mape_bars(
        [m.name for m in report.methods],
        [m.mape for m in report.methods],
        mape_png,
        reference=REFERENCE_MAPE,
    )
    written.append(mape_png)

    traces = {m.name: m.trace for m in report.methods if m.trace}
    if traces:
        trace_png = base.parent / f"{base.stem}_traces.png"
        figures.save_traces(traces, trace_png, ylabel="train MAPE")
        written.append(trace_png)
    return written
