"""Synthetic connectivity datasets, their binary file format, and splits.

Each subject is a complete weighted graph: the Pearson correlation
matrix of V synthetic node time series.  Nodes are partitioned evenly
into functional modules; a node's series mixes its own module's latent
series (within_strength), the other modules' latents (a class-dependent
between strength), unit noise, and a site-specific common component, so
class membership only shows up in the between-module structure.

Datasets round-trip to a little-endian binary file (magic ``BNTD``) that
stores matrices as float32; splits round-trip to a human-readable
key-value text file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

MAGIC = b"BNTD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_RECORD_HEAD = struct.Struct("<IBHB")

_SITE_STREAM = 1
_SUBJECT_STREAM = 2


class DatasetFormatError(Exception):
    """Base class for dataset file format problems."""


class BadMagicError(DatasetFormatError):
    pass


class BadVersionError(DatasetFormatError):
    pass


class TruncationError(DatasetFormatError):
    pass


class VMismatchError(DatasetFormatError):
    """Graph size disagrees with the file header or with other graphs."""


@dataclass
class ConnectivityGraph:
    subject_id: int
    label: int
    site: int
    matrix: np.ndarray  # (V, V) float64, symmetric, unit diagonal

    def validate(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got {m.shape}")
        if not np.isfinite(m).all():
            raise ValueError("matrix has non-finite entries")
        if np.abs(m - m.T).max() > 1e-6:
            raise ValueError("matrix is not symmetric within 1e-6")
        if not (m.diagonal() == 1.0).all():
            raise ValueError("diagonal must be exactly 1")
        if m.min() < -1.0 or m.max() > 1.0:
            raise ValueError("entries must lie in [-1, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class GeneratorSpec:
    nodes: int = 32
    modules: int = 4
    subjects_per_class: int = 200
    sites: int = 4
    within_strength: float = 0.9
    between_strength_class0: float = 0.1
    between_strength_class1: float = 0.4
    site_noise: float = 0.1
    series_length: int = 256
    seed: int = 0

    def validate(self):
        if self.nodes < 1:
            raise ValueError("nodes must be >= 1")
        if not 1 <= self.modules <= self.nodes:
            raise ValueError(
                f"modules must be in 1..nodes, got modules={self.modules}, nodes={self.nodes}"
            )
        if self.subjects_per_class < 1:
            raise ValueError("subjects_per_class must be >= 1")
        if self.sites < 1:
            raise ValueError("sites must be >= 1")
        for name in ("within_strength", "between_strength_class0", "between_strength_class1"):
            s = getattr(self, name)
            if not 0.0 < s < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {s}")
        if self.site_noise < 0.0:
            raise ValueError("site_noise must be >= 0")
        if self.series_length < 4:
            raise ValueError("series_length must be >= 4")


def module_of_node(nodes: int, modules: int) -> np.ndarray:
    """Even contiguous assignment of nodes to modules."""
    return (np.arange(nodes) * modules) // nodes


def generate_dataset(spec: GeneratorSpec) -> list[ConnectivityGraph]:
    """Deterministic synthetic dataset; subject i's stream depends only on
    (seed, i), so any subset can be regenerated independently."""
    spec.validate()
    base = Rng(spec.seed)
    v, t, m = spec.nodes, spec.series_length, spec.modules
    membership = module_of_node(v, m)
    site_pattern = np.stack(
        [base.derive(_SITE_STREAM, s).normal(v) for s in range(spec.sites)]
    )

    graphs = []
    n = 2 * spec.subjects_per_class
    for sid in range(n):
        label = sid // spec.subjects_per_class
        site = (sid % spec.subjects_per_class) % spec.sites
        between = spec.between_strength_class1 if label else spec.between_strength_class0

        srng = base.derive(_SUBJECT_STREAM, sid)
        latents = srng.normal(m * t).reshape(m, t)
        noise = srng.normal(v * t).reshape(v, t)
        common = srng.normal(t)

        own = latents[membership]  # (V, T)
        if m > 1:
            others = (latents.sum(axis=0) - own) / (m - 1)
        else:
            others = np.zeros_like(own)
        series = (
            spec.within_strength * own
            + between * others
            + noise
            + spec.site_noise * site_pattern[site][:, None] * common
        )

        corr = np.corrcoef(series)
        corr = (corr + corr.T) / 2.0
        np.clip(corr, -1.0, 1.0, out=corr)
        np.fill_diagonal(corr, 1.0)
        g = ConnectivityGraph(subject_id=sid, label=int(label), site=int(site), matrix=corr)
        g.validate()
        graphs.append(g)
    return graphs


def write_dataset(path, graphs) -> None:
    """Write graphs to the binary dataset format (matrices as float32)."""
    if len(graphs) == 0:
        raise ValueError("refusing to write an empty dataset")
    v = graphs[0].matrix.shape[0]
    for g in graphs:
        if g.matrix.shape != (v, v):
            raise VMismatchError(
                f"subject {g.subject_id} has shape {g.matrix.shape}, expected ({v}, {v})"
            )
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, v, len(graphs)))
        for g in graphs:
            if not 0 <= g.subject_id < 2**32:
                raise ValueError(f"subject_id out of range: {g.subject_id}")
            if g.label not in (0, 1):
                raise ValueError(f"label must be 0 or 1, got {g.label}")
            if not 0 <= g.site < 2**16:
                raise ValueError(f"site out of range: {g.site}")
            f.write(_RECORD_HEAD.pack(g.subject_id, g.label, g.site, 0))
            f.write(np.ascontiguousarray(g.matrix, dtype="<f4").tobytes())


def read_dataset(path, expect_nodes: int | None = None) -> list[ConnectivityGraph]:
    """Read a binary dataset file; matrices widen to float64."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        if raw[:4] != MAGIC:
            raise BadMagicError(f"not a dataset file: magic {raw[:4]!r}")
        raise TruncationError(f"header truncated at {len(raw)} bytes")
    magic, version, v, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"not a dataset file: magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BadVersionError(f"unsupported dataset version {version}")
    if expect_nodes is not None and v != expect_nodes:
        raise VMismatchError(f"dataset has {v} nodes, expected {expect_nodes}")

    rec_size = _RECORD_HEAD.size + 4 * v * v
    expected = _HEADER.size + n * rec_size
    if len(raw) != expected:
        raise TruncationError(f"file is {len(raw)} bytes, expected {expected} for {n} records")

    graphs = []
    off = _HEADER.size
    for _ in range(n):
        sid, label, site, _pad = _RECORD_HEAD.unpack_from(raw, off)
        off += _RECORD_HEAD.size
        mat = np.frombuffer(raw, dtype="<f4", count=v * v, offset=off).astype(np.float64)
        off += 4 * v * v
        graphs.append(
            ConnectivityGraph(subject_id=sid, label=label, site=site, matrix=mat.reshape(v, v))
        )
    return graphs


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class SplitPlan:
    train: list[int]
    val: list[int]
    test: list[int]
    fractions: tuple[float, float, float]
    seed: int = 0
    stratified: bool = True
    warnings: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            "kind = split_plan",
            f"seed = {self.seed}",
            f"stratified = {'true' if self.stratified else 'false'}",
            "fractions = " + " ".join(repr(float(x)) for x in self.fractions),
        ]
        for w in self.warnings:
            lines.append(f"warning = {w}")
        for name in ("train", "val", "test"):
            ids = getattr(self, name)
            lines.append(f"{name} = " + " ".join(str(i) for i in ids))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitPlan":
        fields: dict[str, str] = {}
        warnings = []
        for line in text.splitlines():
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "warning":
                warnings.append(value)
            else:
                fields[key] = value
        if fields.get("kind") != "split_plan":
            raise ValueError("not a split plan document")
        frac = tuple(float(x) for x in fields["fractions"].split())
        if len(frac) != 3:
            raise ValueError("fractions must have three entries")

        def ids(name):
            value = fields.get(name, "")
            return [int(x) for x in value.split()] if value else []

        return cls(
            train=ids("train"),
            val=ids("val"),
            test=ids("test"),
            fractions=frac,  # type: ignore[arg-type]
            seed=int(fields.get("seed", "0")),
            stratified=fields.get("stratified", "true") == "true",
            warnings=warnings,
        )


def _check_fractions(fractions):
    fractions = tuple(float(x) for x in fractions)
    if len(fractions) != 3:
        raise ValueError("expected three fractions (train, val, test)")
    if any(x < 0 for x in fractions):
        raise ValueError("fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    return fractions


def _largest_remainder(n: int, fractions) -> list[int]:
    """Apportion n items to the fractions; each count is within 1 of n*f."""
    quotas = np.array([n * f for f in fractions])
    base = np.floor(quotas).astype(int)
    leftover = n - int(base.sum())
    order = np.argsort(-(quotas - base), kind="stable")
    for i in range(leftover):
        base[order[i]] += 1
    return base.tolist()


def stratified_split(graphs, fractions, rng: Rng) -> SplitPlan:
    """Split subjects into train/val/test, stratified by (site, label).

    Within every (site, label) cell the subjects are shuffled and
    apportioned by largest remainder, so each cell's count in a split
    deviates from its proportional share by at most 1.  ``graphs`` only
    needs ``subject_id``/``site``/``label`` attributes.
    """
    fractions = _check_fractions(fractions)
    cells: dict[tuple[int, int], list[int]] = {}
    for g in graphs:
        cells.setdefault((g.site, g.label), []).append(g.subject_id)

    plan = SplitPlan([], [], [], fractions, seed=rng.seed, stratified=True)
    n_active = sum(1 for f in fractions if f > 0)
    buckets = (plan.train, plan.val, plan.test)
    for key in sorted(cells):
        ids = cells[key]
        if len(ids) < n_active:
            plan.warnings.append(
                f"cell site={key[0]} label={key[1]} has {len(ids)} subjects "
                f"for {n_active} non-empty splits"
            )
        perm = rng.shuffle(len(ids))
        shuffled = [ids[i] for i in perm]
        counts = _largest_remainder(len(ids), fractions)
        pos = 0
        for bucket, c in zip(buckets, counts):
            bucket.extend(shuffled[pos : pos + c])
            pos += c
    for bucket in buckets:
        bucket.sort()
    return plan


def random_split(graphs, fractions, rng: Rng) -> SplitPlan:
    """Plain shuffled split without stratification."""
    fractions = _check_fractions(fractions)
    ids = [g.subject_id for g in graphs]
    perm = rng.shuffle(len(ids))
    shuffled = [ids[i] for i in perm]
    counts = _largest_remainder(len(ids), fractions)
    plan = SplitPlan([], [], [], fractions, seed=rng.seed, stratified=False)
    pos = 0
    for bucket, c in zip((plan.train, plan.val, plan.test), counts):
        bucket.extend(shuffled[pos : pos + c])
        pos += c
    for bucket in (plan.train, plan.val, plan.test):
        bucket.sort()
    return plan
