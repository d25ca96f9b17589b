"""End-to-end travel time model.

Three views feed a fusion head: the trajectory view encodes the link and
crossing sequence through two parallel channels (an LSTM's last hidden
state, and summed self-attention over a same-padded convolution), the
semantic view element-wise adds embeddings of the trip's global categorical
features with linearly mapped numeric features, and the spatial view
contributes the trajectory's precomputed subgraph embedding. The
concatenated views pass through two rectified fully connected layers into a
softplus output scaled by the training-set mean travel time, so predictions
are always positive.

Training minimizes mean absolute percentage error with adaptive-moment
gradient descent; |x| is built from two rectifier terms, which makes the
subgradient at a zero error exactly 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .dataio import Conditions, Dataset, HeadRecord, Trajectory
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    GraphLookupError,
    NumericError,
    ValidationError,
)
from .graph2vec import EmbeddingState
from .tensor import Tape, Tensor, backward, constant

CHECKPOINT_VERSION = "mvstm-checkpoint-1"

LINK_CATEGORICAL = ("link_id", "status")
LINK_NUMERIC = ("link_time", "link_ratio")
CROSSING_CATEGORICAL = ("crossing_id",)
CROSSING_NUMERIC = ("cross_time",)
SEMANTIC_CATEGORICAL = ("time_slice", "driver_id", "day_of_week", "weather")
SEMANTIC_NUMERIC = ("distance", "simple_eta", "temperature")
NUMERIC_FEATURES = LINK_NUMERIC + CROSSING_NUMERIC + SEMANTIC_NUMERIC


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    d: int = 16
    hidden: int = 32
    delta: int = 16
    hops: int = 2
    conv_window: int = 3
    fusion_widths: tuple[int, int] = (64, 32)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        for name in ("epochs", "batch_size", "d", "hidden", "delta", "conv_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.hops < 0:
            raise ConfigError("hops must be >= 0")


@dataclass(frozen=True)
class Prediction:
    index: int
    eta: float


@dataclass
class MvstmParams:
    """All learnable arrays plus the fixed calibration recorded at training
    time (numeric feature standardization and the output scale)."""

    arrays: dict[str, np.ndarray]
    d: int
    hidden: int
    delta: int
    conv_window: int
    fusion_widths: tuple[int, int]
    cardinalities: dict[str, int]
    norms: dict[str, tuple[float, float]] = field(default_factory=dict)
    eta_scale: float = 1.0
    use_spatial: bool = True
    use_attention: bool = True

    @classmethod
    def init(cls, cardinalities: dict[str, int], config: TrainConfig) -> "MvstmParams":
        rng = np.random.default_rng([config.seed, 0])
        d, hidden, delta = config.d, config.hidden, config.delta
        w1, w2 = config.fusion_widths
        arrays: dict[str, np.ndarray] = {}

        def table(name):
            card = cardinalities.get(name)
            if card is None or card < 1:
                raise ConfigError(f"missing cardinality for feature '{name}'")
            arrays[f"emb.{name}"] = rng.uniform(-0.5 / d, 0.5 / d, size=(card, d))

        def numeric(name):
            arrays[f"num.{name}.w"] = rng.uniform(-0.5 / d, 0.5 / d, size=(d,))
            arrays[f"num.{name}.b"] = np.zeros(d)

        def glorot(shape):
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-limit, limit, size=shape)

        for name in LINK_CATEGORICAL + CROSSING_CATEGORICAL + SEMANTIC_CATEGORICAL:
            table(name)
        for name in NUMERIC_FEATURES:
            numeric(name)

        for gate in ("i", "f", "o", "g"):
            arrays[f"lstm.W_{gate}"] = glorot((hidden, d + hidden))
            arrays[f"lstm.b_{gate}"] = np.zeros(hidden)

        arrays["conv.w"] = glorot((config.conv_window * d, d))
        arrays["conv.b"] = np.zeros(d)

        fusion_in = hidden + d + d + delta
        arrays["fc1.w"] = glorot((w1, fusion_in))
        arrays["fc1.b"] = np.zeros(w1)
        arrays["fc2.w"] = glorot((w2, w1))
        arrays["fc2.b"] = np.zeros(w2)
        arrays["out.w"] = glorot((1, w2))
        # softplus(out.b) = 1, so the initial prediction equals eta_scale
        arrays["out.b"] = np.array([math.log(math.expm1(1.0))])

        norms = {name: (0.0, 1.0) for name in NUMERIC_FEATURES}
        return cls(
            arrays=arrays,
            d=d,
            hidden=hidden,
            delta=delta,
            conv_window=config.conv_window,
            fusion_widths=(w1, w2),
            cardinalities=dict(cardinalities),
            norms=norms,
        )


class BoundParams:
    """Parameter arrays wrapped as tensors for one forward/backward pass.

    Binding to a Tape yields differentiable leaves; binding without a tape
    yields constants for prediction. Prebuilt tensors (for instance slices
    of one flat vector, as gradient-check harnesses use) may be passed
    directly.
    """

    def __init__(self, params: MvstmParams, tape: Tape | None = None, tensors=None):
        self.params = params
        if tensors is not None:
            self.tensors = tensors
        elif tape is None:
            self.tensors = {k: constant(v) for k, v in params.arrays.items()}
        else:
            self.tensors = {k: tape.leaf(v) for k, v in params.arrays.items()}

    def table(self, name: str) -> nn.EmbeddingTable:
        key = f"emb.{name}"
        if key not in self.tensors:
            raise ValidationError(f"no embedding table for feature '{name}'")
        return nn.EmbeddingTable(self.tensors[key])

    def numeric(self, name: str) -> tuple[Tensor, Tensor]:
        wkey, bkey = f"num.{name}.w", f"num.{name}.b"
        if wkey not in self.tensors:
            raise ValidationError(f"no numeric transform for feature '{name}'")
        return self.tensors[wkey], self.tensors[bkey]

    def lstm(self) -> nn.LstmParams:
        t = self.tensors
        return nn.LstmParams(
            t["lstm.W_i"], t["lstm.W_f"], t["lstm.W_o"], t["lstm.W_g"],
            t["lstm.b_i"], t["lstm.b_f"], t["lstm.b_o"], t["lstm.b_g"],
        )

    def conv(self) -> nn.ConvKernel:
        return nn.ConvKernel(
            self.tensors["conv.w"], self.tensors["conv.b"], self.params.conv_window
        )

    def normalized(self, name: str, x: float) -> float:
        mean, std = self.params.norms.get(name, (0.0, 1.0))
        return (float(x) - mean) / std


def bind(params: MvstmParams, tape: Tape | None = None) -> BoundParams:
    return BoundParams(params, tape)


# ---------------------------------------------------------------------------
# encoders


def _feature_sum(bound, categorical, numeric, extra_categorical, extra_numerical):
    vec = None
    for name, index in categorical:
        term = nn.embed(bound.table(name), index)
        vec = term if vec is None else T.add(vec, term)
    for name, x in numeric:
        w, b = bound.numeric(name)
        term = nn.linear_feature(w, b, bound.normalized(name, x))
        vec = term if vec is None else T.add(vec, term)
    for name, index in extra_categorical:
        term = nn.embed(bound.table(name), index)
        vec = T.add(vec, term)
    for name, x in extra_numerical:
        w, b = bound.numeric(name)
        vec = T.add(vec, nn.linear_feature(w, b, bound.normalized(name, x)))
    return vec


def encode_link(record, bound: BoundParams) -> Tensor:
    """Element-wise sum of embedded categorical and linearly mapped numeric
    link features; output dimension d."""
    return _feature_sum(
        bound,
        [("link_id", record.link_id), ("status", record.status)],
        [("link_time", record.link_time), ("link_ratio", record.link_ratio)],
        record.extra_categorical,
        record.extra_numerical,
    )


def encode_crossing(record, bound: BoundParams) -> Tensor:
    return _feature_sum(
        bound,
        [("crossing_id", record.crossing_id)],
        [("cross_time", record.cross_time)],
        record.extra_categorical,
        record.extra_numerical,
    )


def encode_trajectory(trajectory: Trajectory, bound: BoundParams) -> tuple[Tensor, Tensor]:
    """Dual-channel encoding of the link+crossing sequence.

    Returns (h_l, h_a): the LSTM's final hidden state, and the column sum of
    self-attention applied to the convolved sequence. When the attention
    channel is disabled h_a is a zero vector of width d.
    """
    if not trajectory.links:
        raise ValidationError("trajectory has no links")
    rows = [encode_link(l, bound) for l in trajectory.links]
    rows += [encode_crossing(c, bound) for c in trajectory.crossings]
    seq = nn.stack_rows(rows)
    h_l = nn.lstm_sequence(bound.lstm(), seq)
    if bound.params.use_attention:
        h_a = nn.attention_pool(nn.self_attention(nn.conv1d_same(bound.conv(), seq)))
    else:
        h_a = constant(np.zeros(bound.params.d))
    return h_l, h_a


def encode_semantic(head: HeadRecord, cond: Conditions, bound: BoundParams) -> Tensor:
    """Element-wise sum of the trip-level feature vectors; output dimension d."""
    return _feature_sum(
        bound,
        [
            ("time_slice", head.time_slice),
            ("driver_id", head.driver_id),
            ("day_of_week", head.day_of_week),
            ("weather", cond.weather),
        ],
        [
            ("distance", head.distance),
            ("simple_eta", head.simple_eta),
            ("temperature", cond.temperature),
        ],
        (),
        (),
    )


def forward(trajectory: Trajectory, spatial: np.ndarray, bound: BoundParams) -> Tensor:
    """Predicted travel time in seconds; strictly positive via softplus."""
    params = bound.params
    h_l, h_a = encode_trajectory(trajectory, bound)
    semantic = encode_semantic(trajectory.head, trajectory.conditions, bound)
    if params.use_spatial:
        spatial = np.asarray(spatial, dtype=np.float64)
        if spatial.shape != (params.delta,):
            raise ContractError(
                f"spatial feature shape {spatial.shape} != ({params.delta},)"
            )
        m = constant(spatial)
    else:
        m = constant(np.zeros(params.delta))
    z = T.concat([h_l, h_a, semantic, m], axis=0)
    t = bound.tensors
    h1 = T.relu(T.add(T.matmul(t["fc1.w"], z), t["fc1.b"]))
    h2 = T.relu(T.add(T.matmul(t["fc2.w"], h1), t["fc2.b"]))
    raw = T.reshape(T.add(T.matmul(t["out.w"], h2), t["out.b"]), ())
    return T.scale(T.softplus(raw), params.eta_scale)


# ---------------------------------------------------------------------------
# loss


def mape_loss(etas, atas) -> Tensor:
    """Mean of |eta - ata| / ata; accepts tensors or plain numbers for etas."""
    if len(etas) != len(atas):
        raise ContractError(f"length mismatch: {len(etas)} etas vs {len(atas)} atas")
    if not etas:
        raise ContractError("mape_loss needs at least one pair")
    terms = []
    for eta, ata in zip(etas, atas):
        ata = float(ata)
        if ata <= 0:
            raise ValidationError(f"actual time must be positive, got {ata}")
        e = eta if isinstance(eta, Tensor) else constant(float(eta))
        diff = T.add(e, constant(-ata))
        absdiff = T.add(T.relu(diff), T.relu(T.scale(diff, -1.0)))
        terms.append(T.reshape(T.scale(absdiff, 1.0 / ata), (1,)))
    return T.scale(T.reduce_sum(T.concat(terms, axis=0)), 1.0 / len(etas))


# ---------------------------------------------------------------------------
# training


class _Adam:
    def __init__(self, arrays, beta1, beta2, eps):
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            v = self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * (g * g)
            arrays[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _fit_norms(dataset: Dataset) -> dict[str, tuple[float, float]]:
    values: dict[str, list[float]] = {name: [] for name in NUMERIC_FEATURES}
    for t in dataset.trajectories:
        for l in t.links:
            values["link_time"].append(l.link_time)
            values["link_ratio"].append(l.link_ratio)
        for c in t.crossings:
            values["cross_time"].append(c.cross_time)
        values["distance"].append(t.head.distance)
        values["simple_eta"].append(t.head.simple_eta)
        values["temperature"].append(t.conditions.temperature)
    norms = {}
    for name, xs in values.items():
        if xs:
            arr = np.asarray(xs)
            norms[name] = (float(arr.mean()), float(max(arr.std(), 1e-8)))
        else:
            norms[name] = (0.0, 1.0)
    return norms


def _spatial_rows(embeddings: EmbeddingState, count: int) -> np.ndarray:
    if embeddings.num_graphs < count:
        raise GraphLookupError(
            f"embeddings cover {embeddings.num_graphs} trajectories, need {count}"
        )
    return embeddings.graph_vectors


def train(
    dataset: Dataset,
    embeddings: EmbeddingState,
    config: TrainConfig,
    use_spatial: bool = True,
    use_attention: bool = True,
) -> tuple[MvstmParams, list[float]]:
    """Mini-batch MAPE training; returns params and the per-epoch loss trace.

    Trajectory i uses embedding row i as its spatial feature. Numeric
    feature standardization and the output scale are fitted on this dataset
    and stored on the returned params.
    """
    if not dataset.trajectories:
        raise ValidationError("training dataset is empty")
    for i, t in enumerate(dataset.trajectories):
        if t.actual_time is None:
            raise ValidationError(f"trajectory {i} has no actual_time")
    if embeddings.delta != config.delta:
        raise ConfigError(
            f"embedding width {embeddings.delta} != configured delta {config.delta}"
        )
    spatial = _spatial_rows(embeddings, len(dataset.trajectories))

    params = MvstmParams.init(dataset.cardinalities, config)
    params.norms = _fit_norms(dataset)
    params.eta_scale = float(np.mean([t.actual_time for t in dataset.trajectories]))
    params.use_spatial = use_spatial
    params.use_attention = use_attention

    adam = _Adam(params.arrays, config.adam_beta1, config.adam_beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 2])
    n = len(dataset.trajectories)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            tape = Tape()
            bound = bind(params, tape)
            try:
                etas = [
                    forward(dataset.trajectories[i], spatial[i], bound) for i in batch
                ]
                loss = mape_loss(etas, [dataset.trajectories[i].actual_time for i in batch])
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch at index {start}: {exc}"
                ) from exc
            epoch_loss += loss.item() * len(batch)
            if config.learning_rate > 0:
                grads = backward(tape, loss)
                named = {
                    key: grads[leaf.node_id] for key, leaf in bound.tensors.items()
                }
                adam.step(params.arrays, named, config.learning_rate)
        trace.append(epoch_loss / n)
    return params, trace


def predict(params: MvstmParams, embeddings: EmbeddingState, dataset: Dataset) -> list[Prediction]:
    """One positive prediction per trajectory, in dataset order."""
    spatial = _spatial_rows(embeddings, len(dataset.trajectories))
    bound = bind(params, tape=None)
    return [
        Prediction(index=i, eta=forward(t, spatial[i], bound).item())
        for i, t in enumerate(dataset.trajectories)
    ]


def ensemble(preds_a, preds_b, weight: float) -> list[Prediction]:
    """Blend two aligned prediction lists: weight*a + (1-weight)*b."""
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"ensemble weight must be in [0, 1], got {weight}")
    if len(preds_a) != len(preds_b):
        raise ContractError(
            f"prediction lists differ in length: {len(preds_a)} vs {len(preds_b)}"
        )
    out = []
    for a, b in zip(preds_a, preds_b):
        if a.index != b.index:
            raise ContractError(f"misaligned predictions: index {a.index} vs {b.index}")
        out.append(Prediction(index=a.index, eta=weight * a.eta + (1.0 - weight) * b.eta))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: MvstmParams, path, graph2vec_ref: str = "") -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "d": params.d,
            "hidden": params.hidden,
            "delta": params.delta,
            "conv_window": params.conv_window,
            "fusion_widths": list(params.fusion_widths),
            "use_spatial": params.use_spatial,
            "use_attention": params.use_attention,
            "eta_scale": params.eta_scale,
        },
        "graph2vec_ref": graph2vec_ref,
        "cardinalities": params.cardinalities,
        "norms": {k: list(v) for k, v in params.norms.items()},
        "arrays": {k: v.tolist() for k, v in params.arrays.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> MvstmParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        version = doc["version"]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version!r} not supported "
                f"(expected {CHECKPOINT_VERSION!r})"
            )
        cfg = doc["config"]
        params = MvstmParams(
            arrays={k: np.asarray(v, dtype=np.float64) for k, v in doc["arrays"].items()},
            d=int(cfg["d"]),
            hidden=int(cfg["hidden"]),
            delta=int(cfg["delta"]),
            conv_window=int(cfg["conv_window"]),
            fusion_widths=tuple(cfg["fusion_widths"]),
            cardinalities={k: int(v) for k, v in doc["cardinalities"].items()},
            norms={k: (float(v[0]), float(v[1])) for k, v in doc["norms"].items()},
            eta_scale=float(cfg["eta_scale"]),
            use_spatial=bool(cfg["use_spatial"]),
            use_attention=bool(cfg["use_attention"]),
        )
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"cannot load checkpoint from {path}: {exc}") from exc
    return params
