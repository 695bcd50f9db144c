"""Trip ingestion, demand tensors, synthetic data, and file formats.

Raw trips (CSV `timestamp,origin_zone,dest_zone[,count]`, ISO-8601 UTC
timestamps) are aggregated into per-O-D-pair counts over fixed windows
whose length must divide 24 hours. Tensors persist in a small binary
container (magic "ODT1": u32 rank, u64 dims, little-endian float64
values) with a JSON sidecar carrying the resolution, span start, node
order, and zone table, so one artifact feeds training, evaluation, and
prediction.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .distributions import get_head
from .errors import DataError, DomainError, FormatError, ShapeError
from .graph import ODGraph, Zone, ZoneTable, build_od_graph
from .model import ModelConfig

__all__ = [
    "ODT_MAGIC",
    "DemandTensor",
    "DatasetSplit",
    "SparsityReport",
    "load_zones",
    "ingest",
    "synth_generate",
    "split",
    "sparsity_report",
    "histogram_csv",
    "save_demand",
    "load_demand",
    "parse_config_text",
    "load_config",
]

ODT_MAGIC = b"ODT1"

MINUTES_PER_DAY = 1440

DEFAULT_T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _check_resolution(minutes: int) -> int:
    minutes = int(minutes)
    if minutes < 1 or MINUTES_PER_DAY % minutes != 0:
        raise DataError(f"resolution {minutes} min does not divide 24 h")
    return minutes


@dataclass
class DemandTensor:
    """Non-negative integer demand counts, one row per O-D pair.

    t0 marks the start of window 0 and always sits on a window
    boundary; pairs lists the (origin, destination) zone ids in vertex
    order.
    """

    values: np.ndarray
    resolution_minutes: int
    t0: datetime
    pairs: tuple

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError("demand values must be [num_pairs, num_steps]")
        if not np.issubdtype(v.dtype, np.number) or np.any(v != np.floor(v)) \
                or np.any(v < 0):
            raise DataError("demand entries must be non-negative integers")
        self.values = v.astype(np.int64)
        self.resolution_minutes = _check_resolution(self.resolution_minutes)
        if self.t0.tzinfo is None:
            self.t0 = self.t0.replace(tzinfo=timezone.utc)
        self.t0 = self.t0.astimezone(timezone.utc)
        if int(self.t0.timestamp()) % (60 * self.resolution_minutes) != 0:
            raise DataError("t0 is not aligned to a window boundary")
        self.pairs = tuple((str(o), str(d)) for o, d in self.pairs)
        if len(self.pairs) != self.values.shape[0]:
            raise ShapeError("node order length does not match value rows")

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.resolution_minutes

    def slots(self) -> np.ndarray:
        """Daily slot index of every window (0 = midnight window)."""
        first = int(self.t0.timestamp()) // (60 * self.resolution_minutes)
        return (first + np.arange(self.num_steps)) % self.slots_per_day


@dataclass(frozen=True)
class DatasetSplit:
    """Chronological, contiguous train/val/test index ranges."""

    train: tuple
    val: tuple
    test: tuple


def split(num_steps: int, fractions=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Floor-based chronological split; the remainder goes to test."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError("fractions must be three positives summing to 1")
    n_train = int(np.floor(num_steps * fractions[0]))
    n_val = int(np.floor(num_steps * fractions[1]))
    s = DatasetSplit((0, n_train), (n_train, n_train + n_val),
                     (n_train + n_val, num_steps))
    if any(hi <= lo for lo, hi in (s.train, s.val, s.test)):
        raise DataError(f"{num_steps} steps leave an empty split")
    return s


# ---------------------------------------------------------------------------
# Ingestion


def _parse_timestamp(text: str) -> int:
    """ISO-8601 to epoch seconds; naive stamps are taken as UTC."""
    try:
        stamp = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def _read_csv(path) -> tuple[list, list]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    return header, rows[1:]


def load_zones(path) -> ZoneTable:
    """Zone table from CSV with header `zone_id,lat,lng`."""
    header, rows = _read_csv(path)
    if header != ["zone_id", "lat", "lng"]:
        raise FormatError(f"{path}: expected header zone_id,lat,lng")
    zones = []
    for i, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise DataError(f"{path} line {i}: expected 3 fields")
        try:
            zones.append(Zone(row[0].strip(), float(row[1]), float(row[2])))
        except ValueError:
            raise DataError(f"{path} line {i}: bad coordinate") from None
    return ZoneTable(zones)


def ingest(trips_path, zones_path, resolution_minutes: int,
           zone_subset: int | None = None,
           seed: int = 0) -> tuple[DemandTensor, ODGraph]:
    """Aggregate trip records into a demand tensor plus its O-D graph.

    Windows are floor(epoch / resolution); window 0 is the first
    occupied one. Trips naming zones absent from the zone table are an
    error (all offenders listed); with zone_subset, trips touching
    known-but-unselected zones are simply dropped. The tensor conserves
    the accepted records: values.sum() equals their count-weighted sum.
    """
    resolution_minutes = _check_resolution(resolution_minutes)
    table = load_zones(zones_path)
    if zone_subset is not None:
        if not 1 <= zone_subset <= len(table):
            raise DataError(f"zone_subset {zone_subset} outside 1..{len(table)}")
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(table), size=zone_subset, replace=False))
        selected = ZoneTable([table[int(i)] for i in keep])
    else:
        selected = table

    header, rows = _read_csv(trips_path)
    if header not in (["timestamp", "origin_zone", "dest_zone"],
                      ["timestamp", "origin_zone", "dest_zone", "count"]):
        raise FormatError(f"{trips_path}: expected header "
                          "timestamp,origin_zone,dest_zone[,count]")
    has_count = len(header) == 4

    unknown = set()
    accepted = []
    window_width = 60 * resolution_minutes
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{trips_path} line {i}: expected "
                            f"{len(header)} fields")
        origin, dest = row[1].strip(), row[2].strip()
        for zone_id in (origin, dest):
            if zone_id not in table.index:
                unknown.add(zone_id)
        if unknown:
            continue
        count = 1
        if has_count:
            try:
                count = int(row[3])
            except ValueError:
                raise DataError(f"{trips_path} line {i}: bad count "
                                f"{row[3]!r}") from None
            if count < 1:
                raise DataError(f"{trips_path} line {i}: count must be >= 1")
        if origin not in selected.index or dest not in selected.index:
            continue
        window = _parse_timestamp(row[0]) // window_width
        accepted.append((origin, dest, window, count))

    if unknown:
        raise DataError(f"unknown zone ids: {sorted(unknown)}")
    if not accepted:
        raise DataError("no trips left after filtering")

    graph = build_od_graph(selected)
    first = min(w for _, _, w, _ in accepted)
    last = max(w for _, _, w, _ in accepted)
    values = np.zeros((graph.num_nodes, last - first + 1), dtype=np.int64)
    for origin, dest, window, count in accepted:
        values[graph.pair_index(origin, dest), window - first] += count
    t0 = datetime.fromtimestamp(first * window_width, tz=timezone.utc)
    tensor = DemandTensor(values, resolution_minutes, t0, graph.pairs)
    return tensor, graph


# ---------------------------------------------------------------------------
# Synthetic data


def synth_generate(graph: ODGraph, num_steps: int, pi, nb_n, nb_p,
                   seed: int = 0, resolution_minutes: int = 15,
                   t0: datetime = DEFAULT_T0,
                   seasonality=None) -> DemandTensor:
    """Zero-inflated count draws, i.i.d. per window, per node.

    pi/nb_n/nb_p broadcast over nodes. A seasonality profile (one
    positive factor per daily slot) scales the count component's mean
    by moving p while keeping n fixed: p' = p / (p + s*(1 - p)).
    """
    if num_steps < 1:
        raise ShapeError("num_steps must be >= 1")
    v = graph.num_nodes
    pi, nb_n, nb_p = (np.broadcast_to(np.asarray(a, dtype=np.float64),
                                      (v,)).copy()
                      for a in (pi, nb_n, nb_p))
    if np.any(pi < 0) or np.any(pi > 1):
        raise DomainError("pi must lie in [0, 1]")
    if np.any(nb_n <= 0):
        raise DomainError("nb_n must be positive")
    if np.any(nb_p <= 0) or np.any(nb_p >= 1):
        raise DomainError("nb_p must lie in (0, 1)")
    resolution_minutes = _check_resolution(resolution_minutes)

    p2d = np.broadcast_to(nb_p[:, None], (v, num_steps)).copy()
    if seasonality is not None:
        season = np.asarray(seasonality, dtype=np.float64)
        slots_per_day = MINUTES_PER_DAY // resolution_minutes
        if season.shape != (slots_per_day,) or np.any(season <= 0):
            raise DataError("seasonality needs one positive factor per "
                            f"daily slot ({slots_per_day})")
        first = int(t0.timestamp()) // (60 * resolution_minutes)
        s = season[(first + np.arange(num_steps)) % slots_per_day]
        p2d = p2d / (p2d + s[None, :] * (1.0 - p2d))

    rng = np.random.default_rng(seed)
    params = (np.broadcast_to(pi[:, None], p2d.shape),
              np.broadcast_to(nb_n[:, None], p2d.shape), p2d)
    values = get_head("zinb").sample(params, rng)
    return DemandTensor(values, resolution_minutes, t0, graph.pairs)


# ---------------------------------------------------------------------------
# Sparsity report


@dataclass(frozen=True)
class SparsityReport:
    """Zero rate plus the integer demand histogram."""

    zero_rate: float
    bucket_values: np.ndarray
    bucket_counts: np.ndarray


def sparsity_report(tensor: DemandTensor) -> SparsityReport:
    values, counts = np.unique(tensor.values, return_counts=True)
    return SparsityReport(float(np.mean(tensor.values == 0)), values, counts)


def histogram_csv(report: SparsityReport) -> str:
    lines = ["demand,count"]
    lines += [f"{int(v)},{int(c)}" for v, c in
              zip(report.bucket_values, report.bucket_counts)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ODT1 container


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_demand(tensor: DemandTensor, graph: ODGraph, path) -> None:
    """Write the binary container and its JSON sidecar."""
    if tuple(graph.pairs) != tensor.pairs:
        raise ShapeError("graph node order disagrees with the tensor")
    path = Path(path)
    payload = tensor.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(ODT_MAGIC)
        fh.write(struct.pack("<I", tensor.values.ndim))
        for dim in tensor.values.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(payload)
    sidecar = {
        "format": "ODT1",
        "resolution_minutes": tensor.resolution_minutes,
        "t0": tensor.t0.isoformat(),
        "nodes": [list(p) for p in tensor.pairs],
        "num_origins": graph.num_origins,
        "num_destinations": graph.num_destinations,
        "zones": [[z.zone_id, z.lat, z.lng] for z in graph.zones],
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_demand(path) -> tuple[DemandTensor, ODGraph]:
    """Read a container + sidecar back; bit-exact round trip."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if raw[:4] != ODT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    rank = struct.unpack_from("<I", raw, 4)[0]
    if rank != 2:
        raise FormatError(f"{path}: demand tensors are rank 2, got {rank}")
    need = 8 + 8 * rank
    if len(raw) < need:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    count = int(np.prod(dims))
    if len(raw) != need + 8 * count:
        raise FormatError(f"{path}: payload size mismatch")
    values = np.frombuffer(raw, dtype="<f8", offset=need).reshape(dims)

    try:
        sidecar = json.loads(_sidecar_path(path).read_text())
    except OSError as exc:
        raise FormatError(f"missing sidecar for {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad sidecar for {path}: {exc}") from None
    for key in ("format", "resolution_minutes", "t0", "nodes",
                "num_origins", "num_destinations", "zones"):
        if key not in sidecar:
            raise FormatError(f"sidecar for {path} lacks '{key}'")
    if sidecar["format"] != "ODT1":
        raise FormatError(f"sidecar format {sidecar['format']!r} != 'ODT1'")

    zones = ZoneTable([Zone(str(z[0]), float(z[1]), float(z[2]))
                       for z in sidecar["zones"]])
    graph = build_od_graph(zones, int(sidecar["num_origins"]),
                           int(sidecar["num_destinations"]))
    pairs = tuple((str(o), str(d)) for o, d in sidecar["nodes"])
    if pairs != tuple(graph.pairs):
        raise FormatError(f"sidecar node order for {path} does not match "
                          "its zone table")
    if len(pairs) != dims[0]:
        raise FormatError(f"{path}: {dims[0]} rows but {len(pairs)} nodes")
    tensor = DemandTensor(values, int(sidecar["resolution_minutes"]),
                          datetime.fromisoformat(sidecar["t0"]), pairs)
    return tensor, graph


# ---------------------------------------------------------------------------
# Config files


_LIST_FIELDS = {"hidden_widths"}
_BOOL_FIELDS = {"paper_approx_ll"}


def _coerce_config_value(name: str, text: str):
    kind = ModelConfig.__dataclass_fields__[name].type
    if name in _LIST_FIELDS:
        return tuple(int(part) for part in text.split(","))
    if name in _BOOL_FIELDS:
        low = text.lower()
        if low not in ("true", "false"):
            raise DataError(f"config key {name}: expected true/false")
        return low == "true"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_config_text(text: str, source: str = "<config>") -> ModelConfig:
    """Flat `key = value` lines; # comments; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source} line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in ModelConfig.__dataclass_fields__:
            raise DataError(f"{source} line {lineno}: unknown config key "
                            f"'{key}'")
        if key in values:
            raise DataError(f"{source} line {lineno}: duplicate key '{key}'")
        try:
            values[key] = _coerce_config_value(key, raw)
        except ValueError:
            raise DataError(f"{source} line {lineno}: bad value for "
                            f"'{key}': {raw!r}") from None
    return ModelConfig(**values)


def load_config(path) -> ModelConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))
