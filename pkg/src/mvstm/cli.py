"""Command-line pipelines.

Subcommands: ``generate`` (synthetic world files), ``embed`` (subgraph
corpus + skipgram embeddings), ``train`` (model checkpoint), ``evaluate``
(method comparison report with figures), ``predict`` (CSV of travel times).

Flag values override a ``--config`` JSON file, which overrides built-in
defaults; the environment variable ``MVSTM_SEED`` supplies the seed when no
flag or config value does. Every subcommand is reproducible: identical
flags and seed produce byte-identical output files.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import dataio, evaluate, figures, graph2vec, model, roadgraph
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    GraphLookupError,
    MvstmError,
    NumericError,
    ParseError,
    ShapeError,
    ValidationError,
)

SEED_ENV_VAR = "MVSTM_SEED"


class UsageError(MvstmError):
    """Bad invocation: missing or malformed flags."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="JSON file with default flag values")
    sub.add_argument("--seed", type=int, help=f"RNG seed (default: ${SEED_ENV_VAR})")
    sub.add_argument(
        "--print-config", action="store_true",
        help="print the resolved configuration as JSON and exit",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="mvstm", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command")

    gen = commands.add_parser("generate", help="write a synthetic world to disk")
    gen.add_argument("--out", default=".", help="output directory")
    gen.add_argument("--nodes", type=int)
    gen.add_argument("--trajectories", type=int)
    gen.add_argument("--edge-density", type=float)
    gen.add_argument("--mean-route-length", type=float)
    gen.add_argument("--mode", choices=["deterministic", "nonlinear"])
    gen.add_argument("--time-slices", type=int)
    gen.add_argument("--drivers", type=int)
    gen.add_argument("--weather-kinds", type=int)
    gen.add_argument("--statuses", type=int)
    gen.add_argument("--intervals", type=int)
    gen.add_argument("--noise-scale", type=float)
    _add_common(gen)

    emb = commands.add_parser("embed", help="train subgraph embeddings")
    emb.add_argument("--network", help="road network CSV")
    emb.add_argument("--trajectories", help="trajectory JSONL")
    emb.add_argument("--manifest", help="feature cardinality JSON")
    emb.add_argument("--out", default=".", help="output directory")
    emb.add_argument("--delta", type=int)
    emb.add_argument("--lr", type=float)
    emb.add_argument("--epochs", type=int)
    emb.add_argument("--hops", type=int)
    emb.add_argument("--walks-per-graph", type=int)
    emb.add_argument("--walk-length", type=int)
    emb.add_argument("--objective", choices=["full_softmax", "negative_sampling"])
    emb.add_argument("--negatives", type=int)
    emb.add_argument("--save-corpus", action="store_true",
                     help="also write the sampled walk corpus")
    _add_common(emb)

    tr = commands.add_parser("train", help="train the travel time model")
    tr.add_argument("--trajectories", help="trajectory JSONL with actual times")
    tr.add_argument("--manifest", help="feature cardinality JSON")
    tr.add_argument("--embeddings", help="embedding JSON from `mvstm embed`")
    tr.add_argument("--out", default=".", help="output directory")
    tr.add_argument("--d", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--delta", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--variant", choices=["full", "no_spatial", "rnn_only"])
    _add_common(tr)

    ev = commands.add_parser("evaluate", help="compare methods and emit a report")
    ev.add_argument("--out", default=".", help="output directory")
    ev.add_argument("--methods", help="comma list: " + ",".join(evaluate.KNOWN_METHODS))
    ev.add_argument("--seeds", help="comma list of integer seeds")
    ev.add_argument("--train-fraction", type=float)
    ev.add_argument("--network", help="road network CSV (file mode)")
    ev.add_argument("--trajectories", help="trajectory JSONL (file mode)")
    ev.add_argument("--manifest", help="manifest JSON (file mode)")
    ev.add_argument("--nodes", type=int)
    ev.add_argument("--synthetic-trajectories", type=int)
    ev.add_argument("--mode", choices=["deterministic", "nonlinear"])
    ev.add_argument("--d", type=int)
    ev.add_argument("--hidden", type=int)
    ev.add_argument("--delta", type=int)
    ev.add_argument("--lr", type=float)
    ev.add_argument("--epochs", type=int)
    ev.add_argument("--batch-size", type=int)
    ev.add_argument("--embed-lr", type=float)
    ev.add_argument("--embed-epochs", type=int)
    ev.add_argument("--hops", type=int)
    ev.add_argument("--walks-per-graph", type=int)
    ev.add_argument("--walk-length", type=int)
    ev.add_argument("--ensemble-weight", type=float)
    ev.add_argument("--timing", action="store_true",
                    help="keep wall-clock timings in the report files "
                         "(breaks byte-identical re-runs)")
    _add_common(ev)

    pr = commands.add_parser("predict", help="predict travel times to CSV")
    pr.add_argument("--checkpoint", help="model checkpoint JSON")
    pr.add_argument("--embeddings", help="embedding JSON aligned to the input file")
    pr.add_argument("--trajectories", help="trajectory JSONL")
    pr.add_argument("--manifest", help="feature cardinality JSON")
    pr.add_argument("--out", help="output CSV path (default predictions.csv)")
    _add_common(pr)

    return parser


class Resolver:
    """Flag > config file > default, recording every resolved value."""

    def __init__(self, args):
        self.args = args
        self.file: dict = {}
        if getattr(args, "config", None):
            try:
                with open(args.config, encoding="utf-8") as fh:
                    self.file = json.load(fh)
            except OSError as exc:
                raise UsageError(f"cannot read --config file: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ParseError(f"--config file: invalid JSON ({exc.msg})") from exc
            if not isinstance(self.file, dict):
                raise ParseError("--config file must hold a JSON object")
        self.resolved: dict = {}

    def get(self, name, default=None, required=False, cast=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.file.get(name)
        if value is None:
            value = default
        if value is None and required:
            raise UsageError(f"missing required flag --{name.replace('_', '-')}")
        if value is not None and cast is not None:
            value = cast(value)
        self.resolved[name] = value
        return value

    def flag(self, name):
        value = bool(getattr(self.args, name, False) or self.file.get(name, False))
        self.resolved[name] = value
        return value

    def seed(self):
        value = getattr(self.args, "seed", None)
        if value is None:
            value = self.file.get("seed")
        if value is None and os.environ.get(SEED_ENV_VAR):
            value = os.environ[SEED_ENV_VAR]
        if value is None:
            raise UsageError(f"missing required flag --seed (or ${SEED_ENV_VAR})")
        try:
            value = int(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"seed must be an integer, got {value!r}") from exc
        self.resolved["seed"] = value
        return value

    def finish(self, print_config: bool) -> bool:
        """Echo the resolved config when asked; True means stop here."""
        if print_config:
            print(json.dumps(self.resolved, sort_keys=True, indent=2))
        return print_config


def _require_file(path, what):
    if not Path(path).exists():
        raise ValidationError(f"{what} file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    r = Resolver(args)
    seed = r.seed()
    config = dataio.SyntheticConfig(
        nodes=r.get("nodes", 200, cast=int),
        trajectories=r.get("trajectories", 2000, cast=int),
        edge_density=r.get("edge_density", 3.0, cast=float),
        mean_route_length=r.get("mean_route_length", 6.0, cast=float),
        mode=r.get("mode", "deterministic"),
        time_slices=r.get("time_slices", 8, cast=int),
        drivers=r.get("drivers", 16, cast=int),
        weather_kinds=r.get("weather_kinds", 4, cast=int),
        statuses=r.get("statuses", 4, cast=int),
        intervals=r.get("intervals", 12, cast=int),
        noise_scale=r.get("noise_scale", 2.0, cast=float),
    )
    out = Path(r.get("out", "."))
    if r.finish(args.print_config):
        return 0
    out.mkdir(parents=True, exist_ok=True)

    network, dataset = dataio.generate_synthetic(config, seed)
    dataio.write_network_csv(network, out / "network.csv")
    dataio.write_trajectories(dataset, out / "trajectories.jsonl")
    dataio.write_manifest(dataset.cardinalities, out / "manifest.json")
    print(f"wrote network.csv, trajectories.jsonl, manifest.json to {out}")
    if dataset.provenance is not None:
        dataio.write_generator_record(dataset.provenance, out / "factors.json")
        print(f"wrote factors.json (nonlinear target record) to {out}")
    return 0


def cmd_embed(args) -> int:
    r = Resolver(args)
    seed = r.seed()
    network_path = r.get("network", required=True)
    traj_path = r.get("trajectories", required=True)
    manifest_path = r.get("manifest", required=True)
    config = graph2vec.SkipgramConfig(
        delta=r.get("delta", 16, cast=int),
        learning_rate=r.get("lr", 0.025, cast=float),
        epochs=r.get("epochs", 15, cast=int),
        seed=seed,
        objective=r.get("objective", "full_softmax"),
        negatives=r.get("negatives", 5, cast=int),
    )
    hops = r.get("hops", 2, cast=int)
    walks_per_graph = r.get("walks_per_graph", 10, cast=int)
    walk_length = r.get("walk_length", 8, cast=int)
    save_corpus = r.flag("save_corpus")
    out = Path(r.get("out", "."))
    if r.finish(args.print_config):
        return 0
    out.mkdir(parents=True, exist_ok=True)

    network = dataio.parse_road_network(_require_file(network_path, "network"))
    cards = dataio.load_manifest(_require_file(manifest_path, "manifest"))
    dataset = dataio.parse_trajectories(_require_file(traj_path, "trajectory"), cards)
    corpus = roadgraph.build_corpus(
        network, dataset, hops, walks_per_graph, walk_length, seed
    )
    if save_corpus:
        roadgraph.save_corpus(corpus, out / "corpus.jsonl")
    state, trace = graph2vec.train(corpus, config)
    graph2vec.save_embeddings(state, out / "embeddings.json")
    with open(out / "embedding_trace.json", "w", encoding="utf-8") as fh:
        json.dump(trace, fh)
        fh.write("\n")
    figures.save_trace(trace, out / "embedding_trace.png",
                       ylabel="log-likelihood", title="skipgram training")
    print(
        f"embedded {corpus.num_graphs} subgraphs over {corpus.vocab_size} nodes; "
        f"final log-likelihood {trace[-1]:.3f}"
    )
    return 0


def cmd_train(args) -> int:
    r = Resolver(args)
    seed = r.seed()
    traj_path = r.get("trajectories", required=True)
    manifest_path = r.get("manifest", required=True)
    embeddings_path = r.get("embeddings", required=True)
    variant = r.get("variant", "full")
    if variant not in ("full", "no_spatial", "rnn_only"):
        raise UsageError(f"--variant must be full, no_spatial, or rnn_only, got {variant!r}")
    config = model.TrainConfig(
        learning_rate=r.get("lr", 1e-3, cast=float),
        epochs=r.get("epochs", 30, cast=int),
        batch_size=r.get("batch_size", 32, cast=int),
        seed=seed,
        d=r.get("d", 16, cast=int),
        hidden=r.get("hidden", 32, cast=int),
        delta=r.get("delta", 16, cast=int),
    )
    out = Path(r.get("out", "."))
    if r.finish(args.print_config):
        return 0
    out.mkdir(parents=True, exist_ok=True)

    cards = dataio.load_manifest(_require_file(manifest_path, "manifest"))
    dataset = dataio.parse_trajectories(_require_file(traj_path, "trajectory"), cards)
    embeddings = graph2vec.load_embeddings(_require_file(embeddings_path, "embedding"))
    params, trace = model.train(
        dataset, embeddings, config,
        use_spatial=variant != "no_spatial",
        use_attention=variant != "rnn_only",
    )
    model.save_checkpoint(params, out / "checkpoint.json",
                          graph2vec_ref=str(embeddings_path))
    with open(out / "train_trace.json", "w", encoding="utf-8") as fh:
        json.dump(trace, fh)
        fh.write("\n")
    figures.save_trace(trace, out / "train_trace.png",
                       ylabel="train MAPE", title="model training")
    print(f"trained on {len(dataset)} trajectories; final train MAPE {trace[-1]:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    r = Resolver(args)
    seed = r.seed()
    methods = tuple(
        m.strip() for m in r.get("methods", "simple_eta,mvstm").split(",") if m.strip()
    )
    for m in methods:
        if m not in evaluate.KNOWN_METHODS:
            raise UsageError(
                f"unknown method {m!r} for --methods; choose from "
                + ",".join(evaluate.KNOWN_METHODS)
            )
    seeds_raw = r.get("seeds")
    if seeds_raw is None:
        seeds = (seed,)
    elif isinstance(seeds_raw, (list, tuple)):
        seeds = tuple(int(s) for s in seeds_raw)
    else:
        try:
            seeds = tuple(int(s) for s in str(seeds_raw).split(",") if s.strip())
        except ValueError as exc:
            raise UsageError(f"--seeds must be a comma list of integers: {exc}") from exc
    train_config = model.TrainConfig(
        learning_rate=r.get("lr", 1e-3, cast=float),
        epochs=r.get("epochs", 30, cast=int),
        batch_size=r.get("batch_size", 32, cast=int),
        seed=seed,
        d=r.get("d", 16, cast=int),
        hidden=r.get("hidden", 32, cast=int),
        delta=r.get("delta", 16, cast=int),
        hops=r.get("hops", 2, cast=int),
    )
    skip_config = graph2vec.SkipgramConfig(
        delta=train_config.delta,
        learning_rate=r.get("embed_lr", 0.025, cast=float),
        epochs=r.get("embed_epochs", 5, cast=int),
        seed=seed,
    )
    traj_path = r.get("trajectories")
    synthetic = None
    if traj_path is None:
        synthetic = dataio.SyntheticConfig(
            nodes=r.get("nodes", 200, cast=int),
            trajectories=r.get("synthetic_trajectories", 2000, cast=int),
            mode=r.get("mode", "nonlinear"),
        )
    config = evaluate.ExperimentConfig(
        methods=methods,
        seeds=seeds,
        train_fraction=r.get("train_fraction", 0.8, cast=float),
        synthetic=synthetic,
        network_path=r.get("network"),
        trajectories_path=traj_path,
        manifest_path=r.get("manifest"),
        train=train_config,
        skipgram=skip_config,
        walks_per_graph=r.get("walks_per_graph", 10, cast=int),
        walk_length=r.get("walk_length", 8, cast=int),
        ensemble_weight=r.get("ensemble_weight", 0.9, cast=float),
    )
    timing = r.flag("timing")
    out = Path(r.get("out", "."))
    if r.finish(args.print_config):
        return 0
    out.mkdir(parents=True, exist_ok=True)

    report = evaluate.run_experiment(config)
    written = evaluate.emit_report(report, out / "report", include_timing=timing)
    print(evaluate.format_report_table(report, include_timing=timing))
    print("wrote " + ", ".join(p.name for p in written) + f" to {out}")
    return 0


def cmd_predict(args) -> int:
    r = Resolver(args)
    checkpoint_path = r.get("checkpoint", required=True)
    embeddings_path = r.get("embeddings", required=True)
    traj_path = r.get("trajectories", required=True)
    manifest_path = r.get("manifest", required=True)
    out = Path(r.get("out", "predictions.csv"))
    if r.finish(args.print_config):
        return 0

    params = model.load_checkpoint(_require_file(checkpoint_path, "checkpoint"))
    embeddings = graph2vec.load_embeddings(_require_file(embeddings_path, "embedding"))
    cards = dataio.load_manifest(_require_file(manifest_path, "manifest"))
    dataset = dataio.parse_trajectories(_require_file(traj_path, "trajectory"), cards)
    predictions = model.predict(params, embeddings, dataset)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("trajectory_index,eta\n")
        for p in predictions:
            fh.write(f"{p.index},{p.eta!r}\n")
    print(f"wrote {len(predictions)} predictions to {out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "embed": cmd_embed,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no subcommand given; see --help")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError, ConfigError, GraphLookupError,
            CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ShapeError, ContractError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
