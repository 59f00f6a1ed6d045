"""Panels of hierarchical series: loading, scaling, windowing, splitting, noise."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hierarchy import (
    AggregationMatrix,
    HierarchyError,
    HierarchySpec,
    build_aggregation,
    coherency_panel,
)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesPanel:
    """m series x S timesteps, rows in hierarchy node order."""

    values: np.ndarray
    node_ids: tuple[str, ...]
    scale_factor: float = 1.0
    is_scaled: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.node_ids):
            raise DataError(f"values {v.shape} do not match {len(self.node_ids)} series")
        if not np.all(np.isfinite(v)):
            raise DataError("panel contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def S(self) -> int:
        return self.values.shape[1]

    def raw_values(self) -> np.ndarray:
        return self.values * self.scale_factor if self.is_scaled else self.values.copy()


@dataclass(frozen=True)
class WindowedDataset:
    """inputs (n, k, m), targets (n, m); timestamps index the target column."""

    inputs: np.ndarray
    targets: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return self.targets.shape[0]

    def __getitem__(self, sl: slice) -> "WindowedDataset":
        return WindowedDataset(self.inputs[sl], self.targets[sl], self.timestamps[sl])


# ---- io ---------------------------------------------------------------------
def read_values_csv(text: str) -> tuple[list[str], np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty values file") from None
    if len(set(header)) != len(header):
        raise DataError("duplicate series id in values header")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: ragged row ({len(row)} fields, header has {len(header)})")
        try:
            rows.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"line {lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataError("values file has no observations")
    return header, np.array(rows, dtype=np.float64).T


def values_csv_text(panel: SeriesPanel, raw: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(panel.node_ids)
    vals = panel.raw_values() if raw else panel.values
    for col in vals.T:
        w.writerow([repr(float(x)) for x in col])
    return buf.getvalue()


def load_panel(values_csv: str | Path, hierarchy_csv: str | Path) -> tuple[SeriesPanel, HierarchySpec]:
    spec = HierarchySpec.from_csv(hierarchy_csv)
    with open(values_csv, newline="", encoding="utf-8") as fh:
        header, vals = read_values_csv(fh.read())
    return panel_from_columns(header, vals, spec), spec


def panel_from_columns(header, vals: np.ndarray, spec: HierarchySpec) -> SeriesPanel:
    col = {h: i for i, h in enumerate(header)}
    unknown = [h for h in header if h not in set(spec.node_ids)]
    if unknown:
        raise DataError(f"series not in hierarchy: {unknown[:5]}")
    missing = [n for n in spec.node_ids if n not in col]
    if missing:
        raise DataError(f"hierarchy nodes missing from values: {missing[:5]}")
    ordered = vals[[col[n] for n in spec.node_ids]]
    A = build_aggregation(spec)
    meta = {"raw_coherency": coherency_panel(ordered, A)}
    return SeriesPanel(ordered, spec.node_ids, metadata=meta)


def save_dataset(panel: SeriesPanel, spec: HierarchySpec, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vpath, hpath = out / "values.csv", out / "hierarchy.csv"
    vpath.write_text(values_csv_text(panel), encoding="utf-8")
    hpath.write_text(spec.to_csv_text(), encoding="utf-8")
    return vpath, hpath


# ---- transforms -------------------------------------------------------------
def scale_global_max(panel: SeriesPanel) -> SeriesPanel:
    """Divide every entry by the single largest value (keeps hierarchy sums intact)."""
    if panel.is_scaled:
        return panel
    peak = float(panel.values.max())
    if not peak > 0:
        raise DataError("cannot scale a panel whose maximum is not positive")
    meta = dict(panel.metadata)
    return SeriesPanel(panel.values / peak, panel.node_ids, peak, True, meta)


def unscale(panel: SeriesPanel) -> SeriesPanel:
    if not panel.is_scaled:
        return panel
    return SeriesPanel(panel.values * panel.scale_factor, panel.node_ids, 1.0, False, dict(panel.metadata))


def make_windows(panel: SeriesPanel, k: int = 5) -> WindowedDataset:
    """Window t holds columns t-k+1..t and its target is column t+1."""
    S = panel.S
    if k < 1:
        raise DataError("window length must be positive")
    if S <= k:
        raise DataError(f"need more than {k} timesteps, got {S}")
    vals = panel.values.T  # (S, m)
    n = S - k
    idx = np.arange(k)[None, :] + np.arange(n)[:, None]
    inputs = np.ascontiguousarray(vals[idx])
    targets = np.ascontiguousarray(vals[k:])
    return WindowedDataset(inputs, targets, np.arange(k, S))


def split_80_10_10(ds: WindowedDataset) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Chronological 80/10/10 split; the remainder goes to test."""
    n = len(ds)
    if n < 10:
        raise DataError(f"need at least 10 datapoints to split, got {n}")
    n_train = math.floor(0.8 * n)
    n_val = math.floor(0.1 * n)
    return ds[:n_train], ds[n_train:n_train + n_val], ds[n_train + n_val:]


def make_noisy(panel: SeriesPanel, spec: HierarchySpec, drop_fraction: float,
               seed: int | np.random.SeedSequence) -> tuple[SeriesPanel, HierarchySpec, AggregationMatrix]:
    """Delete a random subset of leaves but keep every aggregate's recorded values.

    The surviving panel is generally not coherent with the rebuilt
    aggregation matrix, which is the point.
    """
    if not 0.0 <= drop_fraction < 1.0:
        raise DataError("drop fraction must lie in [0, 1)")
    if panel.node_ids != spec.node_ids:
        raise DataError("panel and hierarchy disagree on node order")
    leaves = list(spec.leaves)
    n_drop = math.floor(drop_fraction * len(leaves))
    rng = np.random.default_rng(seed)
    dropped = sorted(rng.choice(len(leaves), size=n_drop, replace=False).tolist()) if n_drop else []
    dropped_ids = [leaves[i] for i in dropped]
    dropped_set = set(dropped_ids)
    ch = spec.children
    for node, kids in ch.items():
        if kids and all(c in dropped_set for c in kids):
            raise HierarchyError(f"dropping {len(dropped_ids)} leaves would leave aggregate {node!r} with no children")
    keep = [n for n in spec.node_ids if n not in dropped_set]
    new_spec = spec.subset(keep)
    rows = [spec.index(n) for n in keep]
    A = build_aggregation(new_spec)
    vals = panel.values[rows]
    meta = dict(panel.metadata)
    meta.update({
        "dropped": dropped_ids,
        "drop_fraction": drop_fraction,
        "raw_coherency": coherency_panel(panel.raw_values()[rows], A),
    })
    noisy = SeriesPanel(vals, tuple(keep), panel.scale_factor, panel.is_scaled, meta)
    return noisy, new_spec, A


def noisy_manifest(source: str, seed, panel: SeriesPanel) -> str:
    return json.dumps({
        "source": source,
        "seed": seed,
        "drop_fraction": panel.metadata.get("drop_fraction"),
        "dropped": panel.metadata.get("dropped", []),
        "raw_coherency": panel.metadata.get("raw_coherency"),
    }, indent=2)


# ---- synthetic data -----------------------------------------------------------
def synthetic_hierarchy(branching: int | list[int], depth: int) -> HierarchySpec:
    """A balanced tree: ``depth`` levels, each internal node with ``branching`` children.

    ``branching`` may be a list giving the fan-out per level.
    """
    if depth < 1:
        raise DataError("depth must be at least 1")
    fan = [branching] * (depth - 1) if isinstance(branching, int) else list(branching)
    if len(fan) != depth - 1 or any(f < 1 for f in fan):
        raise DataError("need a positive fan-out for each of the depth-1 internal levels")
    ids = ["total"]
    parent: dict[str, str] = {}
    frontier = ["total"]
    for lvl, f in enumerate(fan, start=2):
        nxt = []
        for p in frontier:
            for j in range(f):
                name = f"{p}_{j}" if p != "total" else f"s{j}"
                ids.append(name)
                parent[name] = p
                nxt.append(name)
        frontier = nxt
    return HierarchySpec(tuple(ids), parent)


def generate_synthetic(branching: int | list[int] = 4, depth: int = 3, timesteps: int = 300,
                       seed: int = 0, period: int = 12, noise: float = 0.15,
                       ar: float = 0.6) -> tuple[SeriesPanel, HierarchySpec]:
    """Coherent panel whose leaves are level + trend + seasonality + AR(1) noise.

    Aggregates are exact sums of their leaves. Leaves are clipped at zero
    before aggregation, so the panel is nonnegative and exactly coherent.
    """
    spec = synthetic_hierarchy(branching, depth)
    rng = np.random.default_rng(seed)
    leaf_idx = list(spec.leaf_indices)
    b = len(leaf_idx)
    t = np.arange(timesteps)
    level = rng.uniform(2.0, 6.0, size=(b, 1))
    amp = rng.uniform(0.3, 1.5, size=(b, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(b, 1))
    trend = rng.uniform(-0.002, 0.006, size=(b, 1))
    season = amp * np.sin(2 * np.pi * t / period + phase)
    # shared component: gives the leaves cross-series structure
    common = 0.5 * np.sin(2 * np.pi * t / (2.5 * period))
    eps = rng.normal(0.0, noise, size=(b, timesteps))
    ar_noise = np.zeros_like(eps)
    for s in range(timesteps):
        ar_noise[:, s] = eps[:, s] + (ar * ar_noise[:, s - 1] if s else 0.0)
    leaves = np.maximum(level * (1.0 + trend * t) + season + common + ar_noise, 0.0)
    vals = np.zeros((spec.m, timesteps))
    vals[leaf_idx] = leaves
    A = build_aggregation(spec)
    vals = A.entries @ vals
    panel = SeriesPanel(vals, spec.node_ids, metadata={"raw_coherency": coherency_panel(vals, A), "synthetic_seed": seed})
    return panel, spec


# ---- prepared experiment data ----------------------------------------------------
@dataclass(frozen=True)
class PreparedData:
    spec: HierarchySpec
    A: AggregationMatrix
    panel: SeriesPanel  # scaled
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset


def prepare(panel: SeriesPanel, spec: HierarchySpec, k: int = 5) -> PreparedData:
    """Scale by the global max, window with lag ``k`` and split 80/10/10."""
    if panel.node_ids != spec.node_ids:
        raise DataError("panel and hierarchy disagree on node order")
    scaled = scale_global_max(panel)
    tr, va, te = split_80_10_10(make_windows(scaled, k))
    if len(va) == 0 or len(te) == 0:
        raise DataError("empty validation or test split")
    return PreparedData(spec, build_aggregation(spec), scaled, tr, va, te)


__all__ = [
    "DataError", "SeriesPanel", "WindowedDataset", "PreparedData", "load_panel", "save_dataset",
    "read_values_csv", "values_csv_text", "panel_from_columns", "scale_global_max", "unscale",
    "make_windows", "split_80_10_10", "make_noisy", "noisy_manifest", "synthetic_hierarchy",
    "generate_synthetic", "prepare",
]
