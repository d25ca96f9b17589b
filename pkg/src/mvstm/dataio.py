"""Parsing, validation, synthetic world generation, and dataset splits.

File formats
------------
Road network: CSV with header ``src_link,dst_link`` plus optional static
attribute columns, integer link ids. Attribute columns are attached to the
source link of each row.

Trajectories: newline-delimited JSON, one object per line::

    {"head": {"distance": 812.0, "simple_eta": 301.5, "time_slice": 3,
              "driver_id": 7, "day_of_week": 2},
     "conditions": {"weather": 1, "temperature": 22.5, "t": 4},
     "links": [{"link_id": 12, "status": 0, "link_time": 35.2,
                "link_ratio": 0.8}],
     "crossings": [{"crossing_id": 4, "cross_time": 9.1}],
     "actual_time": 340.2}

``actual_time`` is optional (absent at prediction time). A sidecar manifest
declares the vocabulary size of every categorical feature as a JSON map, so
records can be validated without scanning the whole file.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .roadgraph import RoadNetwork

CATEGORICAL_FEATURES = (
    "link_id",
    "status",
    "crossing_id",
    "time_slice",
    "driver_id",
    "day_of_week",
    "weather",
)


@dataclass(frozen=True)
class LinkRecord:
    """One road segment of a trajectory; ``status`` is the categorical
    congestion level at traversal time."""

    link_id: int
    status: int
    link_time: float
    link_ratio: float
    extra_categorical: tuple[tuple[str, int], ...] = ()
    extra_numerical: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class CrossingRecord:
    """One intersection segment between links."""

    crossing_id: int
    cross_time: float
    extra_categorical: tuple[tuple[str, int], ...] = ()
    extra_numerical: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class HeadRecord:
    """Per-trip global features."""

    distance: float
    simple_eta: float
    time_slice: int
    driver_id: int
    day_of_week: int


@dataclass(frozen=True)
class Conditions:
    """Context indexed by the time interval the trip happens in."""

    weather: int
    temperature: float
    time_interval: int


@dataclass(frozen=True)
class Trajectory:
    links: tuple[LinkRecord, ...]
    crossings: tuple[CrossingRecord, ...]
    head: HeadRecord
    conditions: Conditions
    actual_time: float | None = None


@dataclass(frozen=True)
class GeneratorRecord:
    """Hidden factors of the nonlinear synthetic world, kept so tests can
    replay the target computation exactly."""

    g_weather: tuple[float, ...]
    g_time_slice: tuple[float, ...]
    g_driver: tuple[float, ...]
    noise: tuple[float, ...]  # one draw per trajectory, in dataset order


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    cardinalities: dict[str, int]
    provenance: GeneratorRecord | None = None

    def __len__(self):
        return len(self.trajectories)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the generated world.

    ``edge_density`` is the mean out-degree. In deterministic mode every
    traversal of a link takes exactly its fixed time, so the trip time is
    exactly the sum of its parts. In nonlinear mode the link-time sum is
    scaled by a multiplicative factor looked up from (weather, time_slice,
    driver) tables, plus Gaussian noise.
    """

    nodes: int = 200
    trajectories: int = 2000
    edge_density: float = 3.0
    mean_route_length: float = 6.0
    mode: str = "deterministic"
    time_slices: int = 8
    drivers: int = 16
    weather_kinds: int = 4
    statuses: int = 4
    intervals: int = 12
    noise_scale: float = 2.0


# ---------------------------------------------------------------------------
# road network files


def parse_road_network(path) -> RoadNetwork:
    """Read an edge-list CSV into a directed RoadNetwork.

    Duplicate edges collapse to one; self-loops are accepted and flagged on
    the result. A malformed row raises ParseError naming its line number.
    """
    edges = []
    link_attrs: dict[int, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise ParseError("line 1: missing header")
        columns = [c.strip() for c in header.split(",")]
        if columns[:2] != ["src_link", "dst_link"]:
            raise ParseError(
                "line 1: header must start with 'src_link,dst_link', "
                f"got {header!r}"
            )
        attr_names = columns[2:]
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(columns):
                raise ParseError(
                    f"line {line_no}: expected {len(columns)} fields, got {len(parts)}"
                )
            try:
                src, dst = int(parts[0]), int(parts[1])
                attrs = {name: float(v) for name, v in zip(attr_names, parts[2:])}
            except ValueError as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            edges.append((src, dst))
            if attrs:
                link_attrs.setdefault(src, {}).update(attrs)
    return RoadNetwork.from_edges(edges, link_attrs=link_attrs)


def write_network_csv(network: RoadNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("src_link,dst_link\n")
        for u, v in network.edges():
            fh.write(f"{u},{v}\n")


# ---------------------------------------------------------------------------
# trajectory files


def _require(obj, key, where, line_no):
    if key not in obj:
        raise ValidationError(f"line {line_no}: missing field '{where}{key}'")
    return obj[key]


def _check_index(name, value, cardinalities, line_no):
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"line {line_no}: field '{name}' must be an integer")
    if value < 0:
        raise ValidationError(f"line {line_no}: field '{name}' must be >= 0")
    card = cardinalities.get(name)
    if card is not None and value >= card:
        raise ValidationError(
            f"line {line_no}: field '{name}' index {value} >= cardinality {card}"
        )
    return value


def _check_real(name, value, line_no, minimum=None, maximum=None, strict_min=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"line {line_no}: field '{name}' must be a number")
    if not math.isfinite(value):
        raise ValidationError(f"line {line_no}: field '{name}' must be finite")
    if minimum is not None:
        if strict_min and value <= minimum:
            raise ValidationError(
                f"line {line_no}: field '{name}' must be > {minimum}, got {value}"
            )
        if not strict_min and value < minimum:
            raise ValidationError(
                f"line {line_no}: field '{name}' must be >= {minimum}, got {value}"
            )
    if maximum is not None and value > maximum:
        raise ValidationError(
            f"line {line_no}: field '{name}' must be <= {maximum}, got {value}"
        )
    return value


def trajectory_from_json(obj, cardinalities, line_no=0) -> Trajectory:
    """Validate one JSON object against the schema and the manifest."""
    head_obj = _require(obj, "head", "", line_no)
    cond_obj = _require(obj, "conditions", "", line_no)
    links_obj = _require(obj, "links", "", line_no)
    crossings_obj = obj.get("crossings", [])
    if not links_obj:
        raise ValidationError(f"line {line_no}: trajectory has no links")

    head = HeadRecord(
        distance=_check_real("distance", _require(head_obj, "distance", "head.", line_no),
                             line_no, minimum=0.0, strict_min=True),
        simple_eta=_check_real("simple_eta", _require(head_obj, "simple_eta", "head.", line_no),
                               line_no, minimum=0.0),
        time_slice=_check_index("time_slice", _require(head_obj, "time_slice", "head.", line_no),
                                cardinalities, line_no),
        driver_id=_check_index("driver_id", _require(head_obj, "driver_id", "head.", line_no),
                               cardinalities, line_no),
        day_of_week=_check_index("day_of_week", _require(head_obj, "day_of_week", "head.", line_no),
                                 cardinalities, line_no),
    )
    if head.day_of_week > 6:
        raise ValidationError(
            f"line {line_no}: field 'day_of_week' must be in 0..6, got {head.day_of_week}"
        )
    conditions = Conditions(
        weather=_check_index("weather", _require(cond_obj, "weather", "conditions.", line_no),
                             cardinalities, line_no),
        temperature=_check_real("temperature", _require(cond_obj, "temperature", "conditions.", line_no),
                                line_no),
        time_interval=_check_index("t", _require(cond_obj, "t", "conditions.", line_no),
                                   {}, line_no),
    )
    links = tuple(
        LinkRecord(
            link_id=_check_index("link_id", _require(l, "link_id", "links[].", line_no),
                                 cardinalities, line_no),
            status=_check_index("status", _require(l, "status", "links[].", line_no),
                                cardinalities, line_no),
            link_time=_check_real("link_time", _require(l, "link_time", "links[].", line_no),
                                  line_no, minimum=0.0),
            link_ratio=_check_real("link_ratio", _require(l, "link_ratio", "links[].", line_no),
                                   line_no, minimum=0.0, maximum=1.0),
        )
        for l in links_obj
    )
    crossings = tuple(
        CrossingRecord(
            crossing_id=_check_index("crossing_id", _require(c, "crossing_id", "crossings[].", line_no),
                                     cardinalities, line_no),
            cross_time=_check_real("cross_time", _require(c, "cross_time", "crossings[].", line_no),
                                   line_no, minimum=0.0),
        )
        for c in crossings_obj
    )
    actual = obj.get("actual_time")
    if actual is not None:
        actual = _check_real("actual_time", actual, line_no, minimum=0.0, strict_min=True)
    return Trajectory(links=links, crossings=crossings, head=head,
                      conditions=conditions, actual_time=actual)


def trajectory_to_json(trajectory: Trajectory) -> dict:
    obj = {
        "head": {
            "distance": trajectory.head.distance,
            "simple_eta": trajectory.head.simple_eta,
            "time_slice": trajectory.head.time_slice,
            "driver_id": trajectory.head.driver_id,
            "day_of_week": trajectory.head.day_of_week,
        },
        "conditions": {
            "weather": trajectory.conditions.weather,
            "temperature": trajectory.conditions.temperature,
            "t": trajectory.conditions.time_interval,
        },
        "links": [
            {
                "link_id": l.link_id,
                "status": l.status,
                "link_time": l.link_time,
                "link_ratio": l.link_ratio,
            }
            for l in trajectory.links
        ],
        "crossings": [
            {"crossing_id": c.crossing_id, "cross_time": c.cross_time}
            for c in trajectory.crossings
        ],
    }
    if trajectory.actual_time is not None:
        obj["actual_time"] = trajectory.actual_time
    return obj


def parse_trajectories(path, cardinalities: dict[str, int]) -> Dataset:
    """Read a newline-delimited JSON trajectory file, in file order."""
    trajectories = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            trajectories.append(trajectory_from_json(obj, cardinalities, line_no))
    return Dataset(trajectories=trajectories, cardinalities=dict(cardinalities))


def write_trajectories(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trajectory in dataset.trajectories:
            fh.write(json.dumps(trajectory_to_json(trajectory), sort_keys=True))
            fh.write("\n")


def write_manifest(cardinalities: dict[str, int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cardinalities, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(path) -> dict[str, int]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ParseError("manifest must be a JSON object of feature -> cardinality")
    return {str(k): int(v) for k, v in raw.items()}


def write_generator_record(record: GeneratorRecord, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(record), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_generator_record(path) -> GeneratorRecord:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return GeneratorRecord(
        g_weather=tuple(raw["g_weather"]),
        g_time_slice=tuple(raw["g_time_slice"]),
        g_driver=tuple(raw["g_driver"]),
        noise=tuple(raw["noise"]),
    )


# ---------------------------------------------------------------------------
# synthetic worlds


def generate_synthetic(config: SyntheticConfig, seed: int) -> tuple[RoadNetwork, Dataset]:
    """Deterministic synthetic world; a pure function of (config, seed).

    Deterministic mode guarantees actual_time == sum(link_time) +
    sum(cross_time) exactly. Nonlinear mode computes

        actual_time = sum(link_time) * g(weather, time_slice, driver)
                      + sum(cross_time) + noise

    and records g and every noise draw on the dataset's provenance.
    """
    if config.nodes <= 0:
        raise ConfigError("node count must be positive")
    if config.trajectories <= 0:
        raise ConfigError("trajectory count must be positive")
    if config.mode not in ("deterministic", "nonlinear"):
        raise ConfigError(f"unknown mode {config.mode!r}")
    if config.edge_density <= 0:
        raise ConfigError("edge density must be positive")
    if config.mean_route_length < 1:
        raise ConfigError("mean route length must be >= 1")

    rng = np.random.default_rng(seed)
    n = config.nodes

    # topology: every node keeps at least one out-edge so walks never stall
    edges = set()
    for u in range(n):
        degree = max(1, int(rng.poisson(config.edge_density)))
        degree = min(degree, max(1, n - 1))
        if n == 1:
            targets = [u]
        else:
            choices = [v for v in range(n) if v != u]
            targets = rng.choice(choices, size=degree, replace=False)
        for v in targets:
            edges.add((u, int(v)))
    network = RoadNetwork.from_edges(sorted(edges))

    edge_list = network.edges()
    crossing_of_edge = {edge: i for i, edge in enumerate(edge_list)}

    link_time = rng.uniform(20.0, 80.0, size=n)
    link_length = rng.uniform(100.0, 1000.0, size=n)
    cross_time = rng.uniform(5.0, 15.0, size=len(edge_list))

    g_weather = rng.uniform(0.80, 1.20, size=config.weather_kinds)
    g_time = rng.uniform(0.90, 1.10, size=config.time_slices)
    g_driver = rng.uniform(0.95, 1.05, size=config.drivers)

    trajectories = []
    noises = []
    for _ in range(config.trajectories):
        length = max(2, int(rng.poisson(config.mean_route_length)))
        route = [int(rng.integers(n))]
        while len(route) < length:
            here = route[-1]
            neighbors = network.out_edges[here]
            route.append(neighbors[rng.integers(len(neighbors))])

        links = tuple(
            LinkRecord(
                link_id=u,
                status=int(rng.integers(config.statuses)),
                link_time=float(link_time[u]),
                link_ratio=float(rng.uniform(0.0, 1.0)),
            )
            for u in route
        )
        crossings = tuple(
            CrossingRecord(
                crossing_id=crossing_of_edge[(u, v)],
                cross_time=float(cross_time[crossing_of_edge[(u, v)]]),
            )
            for u, v in zip(route[:-1], route[1:])
        )
        weather = int(rng.integers(config.weather_kinds))
        time_slice = int(rng.integers(config.time_slices))
        driver = int(rng.integers(config.drivers))
        sum_link = float(sum(l.link_time for l in links))
        sum_cross = float(sum(c.cross_time for c in crossings))

        head = HeadRecord(
            distance=float(sum(link_length[u] for u in route)),
            simple_eta=sum_link + sum_cross,
            time_slice=time_slice,
            driver_id=driver,
            day_of_week=int(rng.integers(7)),
        )
        conditions = Conditions(
            weather=weather,
            temperature=float(rng.uniform(-5.0, 35.0)),
            time_interval=int(rng.integers(config.intervals)),
        )
        if config.mode == "deterministic":
            actual = sum_link + sum_cross
        else:
            factor = float(g_weather[weather] * g_time[time_slice] * g_driver[driver])
            noise = float(rng.normal(0.0, config.noise_scale))
            noises.append(noise)
            actual = sum_link * factor + sum_cross + noise
            if actual <= 0:  # pragma: no cover - sums are in the hundreds
                raise ConfigError("noise scale too large for generated travel times")
        trajectories.append(
            Trajectory(links=links, crossings=crossings, head=head,
                       conditions=conditions, actual_time=actual)
        )

    cardinalities = {
        "link_id": n,
        "status": config.statuses,
        "crossing_id": len(edge_list),
        "time_slice": config.time_slices,
        "driver_id": config.drivers,
        "day_of_week": 7,
        "weather": config.weather_kinds,
    }
    provenance = None
    if config.mode == "nonlinear":
        provenance = GeneratorRecord(
            g_weather=tuple(float(x) for x in g_weather),
            g_time_slice=tuple(float(x) for x in g_time),
            g_driver=tuple(float(x) for x in g_driver),
            noise=tuple(noises),
        )
    return network, Dataset(trajectories=trajectories, cardinalities=cardinalities,
                            provenance=provenance)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded disjoint index split with sizes (floor(n*f), n - floor(n*f)).

    Both halves keep ascending original order, so a row table aligned to the
    full dataset can be subset with the same lists.
    """
    if n < 1:
        raise ConfigError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {train_fraction}")
    k = int(math.floor(n * train_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return sorted(int(i) for i in perm[:k]), sorted(int(i) for i in perm[k:])


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded split of the trajectories.

    The generator provenance is not carried over because its noise record is
    aligned to full-dataset indices.
    """
    train_idx, test_idx = split_indices(len(dataset.trajectories), train_fraction, seed)
    train = Dataset([dataset.trajectories[i] for i in train_idx],
                    dict(dataset.cardinalities))
    test = Dataset([dataset.trajectories[i] for i in test_idx],
                   dict(dataset.cardinalities))
    return train, test
