"""Hierarchy structures, aggregation/summing/projection matrices and coherency.

Node order is fixed by the :class:`HierarchySpec` and shared by every matrix
and panel built from it. Coherency is always measured against the leaves:
an aggregate is compared with the sum of its leaf descendants.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg


class HierarchyError(ValueError):
    """Malformed hierarchy (cycle, duplicate id, unknown node, ...)."""


@dataclass(frozen=True)
class HierarchySpec:
    node_ids: tuple[str, ...]
    parent: Mapping[str, str]
    level: Mapping[str, int] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        ids = tuple(self.node_ids)
        object.__setattr__(self, "node_ids", ids)
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise HierarchyError(f"duplicate node id {dup!r}")
        if not ids:
            raise HierarchyError("hierarchy has no nodes")
        known = set(ids)
        parent = {}
        for child, par in dict(self.parent).items():
            if child not in known:
                raise HierarchyError(f"unknown child {child!r} in parent map")
            if par is None or par == "":
                continue
            if par not in known:
                raise HierarchyError(f"unknown parent {par!r} of {child!r}")
            if par == child:
                raise HierarchyError(f"cycle: {child!r} is its own parent")
            parent[child] = par
        object.__setattr__(self, "parent", parent)
        depth = _depths(ids, parent)
        if self.level is None:
            object.__setattr__(self, "level", depth)
        else:
            level = {k: int(v) for k, v in dict(self.level).items()}
            if set(level) != known or any(v < 1 for v in level.values()):
                raise HierarchyError("level map must assign a positive level to every node")
            object.__setattr__(self, "level", level)
        for leaf in self.leaves:
            node = leaf
            while node in self.parent:
                node = self.parent[node]
                if self.level[node] >= self.level[leaf]:
                    raise HierarchyError(
                        f"leaf {leaf!r} must have a larger level than ancestor {node!r}"
                    )

    @property
    def m(self) -> int:
        return len(self.node_ids)

    @property
    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.node_ids}
        for child in self.node_ids:
            if child in self.parent:
                out[self.parent[child]].append(child)
        return out

    @property
    def leaves(self) -> tuple[str, ...]:
        ch = self.children
        return tuple(n for n in self.node_ids if not ch[n])

    @property
    def leaf_indices(self) -> tuple[int, ...]:
        ch = self.children
        return tuple(i for i, n in enumerate(self.node_ids) if not ch[n])

    @property
    def levels(self) -> list[int]:
        return sorted(set(self.level.values()))

    def index(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def level_rows(self, level: int) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.node_ids) if self.level[n] == level], dtype=int)

    def leaf_descendants(self, node_id: str) -> list[str]:
        ch = self.children
        out, stack = [], [node_id]
        while stack:
            n = stack.pop()
            if ch[n]:
                stack.extend(reversed(ch[n]))
            else:
                out.append(n)
        return out

    def subset(self, keep: Sequence[str]) -> "HierarchySpec":
        """Restrict to ``keep`` (order preserved); parents must survive with their children."""
        keep_set = set(keep)
        ids = [n for n in self.node_ids if n in keep_set]
        parent = {c: p for c, p in self.parent.items() if c in keep_set}
        for c, p in parent.items():
            if p not in keep_set:
                raise HierarchyError(f"parent {p!r} of kept node {c!r} was removed")
        return HierarchySpec(tuple(ids), parent, {n: self.level[n] for n in ids})

    # ---- csv -------------------------------------------------------------
    @classmethod
    def from_csv(cls, path: str | Path) -> "HierarchySpec":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.from_csv_text(fh.read())

    @classmethod
    def from_csv_text(cls, text: str) -> "HierarchySpec":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise HierarchyError("empty hierarchy file") from None
        if [h.strip() for h in header] != ["child", "parent"]:
            raise HierarchyError(f"hierarchy header must be 'child,parent', got {header!r}")
        order: list[str] = []
        seen: set[str] = set()
        declared: set[str] = set()
        parent: dict[str, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise HierarchyError(f"line {lineno}: expected 2 fields, got {len(row)}")
            child, par = row[0].strip(), row[1].strip()
            if not child:
                raise HierarchyError(f"line {lineno}: empty child id")
            if child in declared:
                raise HierarchyError(f"duplicate node id {child!r}")
            declared.add(child)
            for n in (child, par):
                if n and n not in seen:
                    seen.add(n)
                    order.append(n)
            if par:
                parent[child] = par
        spec = cls(tuple(order), parent)
        return spec

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["child", "parent"])
        for n in self.node_ids:
            w.writerow([n, self.parent.get(n, "")])
        return buf.getvalue()


def _depths(ids: Sequence[str], parent: Mapping[str, str]) -> dict[str, int]:
    depth: dict[str, int] = {}
    for start in ids:
        path = []
        node = start
        on_path = set()
        while node not in depth:
            if node in on_path:
                raise HierarchyError(f"cycle detected through {node!r}")
            on_path.add(node)
            path.append(node)
            if node not in parent:
                depth[node] = 1
                path.pop()
                break
            node = parent[node]
        base = depth[node]
        for n in reversed(path):
            base += 1
            depth[n] = base
    return depth


@dataclass(frozen=True)
class AggregationMatrix:
    entries: np.ndarray
    leaf_indices: tuple[int, ...]

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def build_aggregation(spec: HierarchySpec) -> AggregationMatrix:
    """Return the m x m 0/1 matrix with A[i, j] = 1 iff leaf j descends from node i."""
    leaves = spec.leaf_indices
    if not leaves:
        raise HierarchyError("hierarchy has no leaves")
    pos = {n: i for i, n in enumerate(spec.node_ids)}
    A = np.zeros((spec.m, spec.m))
    for i, node in enumerate(spec.node_ids):
        for leaf in spec.leaf_descendants(node):
            A[i, pos[leaf]] = 1.0
    return AggregationMatrix(A, tuple(leaves))


def summing_matrix(A: AggregationMatrix) -> np.ndarray:
    S = np.ascontiguousarray(A.entries[:, list(A.leaf_indices)])
    S.setflags(write=False)
    return S


def _check_dims(yhat: np.ndarray, A: AggregationMatrix) -> None:
    if yhat.shape[0] != A.m:
        raise ValueError(f"forecast has {yhat.shape[0]} series, hierarchy has {A.m}")


def coherency(yhat, A: AggregationMatrix) -> float:
    """Euclidean distance between ``yhat`` and its leaf-implied aggregation."""
    y = np.asarray(yhat, dtype=float)
    if y.ndim != 1:
        raise ValueError("coherency expects a vector; use coherency_panel for matrices")
    _check_dims(y, A)
    return float(np.linalg.norm(y - A.entries @ y))


def coherency_columns(yhat, A: AggregationMatrix) -> np.ndarray:
    """Per-column coherency of an m x T matrix."""
    Y = np.asarray(yhat, dtype=float)
    if Y.ndim != 2:
        raise ValueError("expected an m x T matrix")
    _check_dims(Y, A)
    return np.linalg.norm(Y - A.entries @ Y, axis=0)


def coherency_panel(yhat, A: AggregationMatrix) -> float:
    """Mean per-timestep coherency of an m x T forecast matrix."""
    cols = coherency_columns(yhat, A)
    if cols.size == 0:
        raise ValueError("need at least one timestep")
    return float(cols.mean())


def projection_matrix(S) -> np.ndarray:
    """Orthogonal projector S (S^T S)^-1 S^T onto the coherent subspace."""
    S = np.asarray(S, dtype=float)
    G = S.T @ S
    try:
        X = scipy.linalg.solve(G, S.T, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise HierarchyError(f"summing matrix is rank deficient: {exc}") from exc
    P = S @ X
    P = 0.5 * (P + P.T)
    P.setflags(write=False)
    return P
