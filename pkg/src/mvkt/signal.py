"""ECG records, the ECGPACK container, preprocessing and fold assignment.

An ECGPACK directory holds ``manifest.json`` plus one raw binary per record
(little-endian float32, lead-major, exactly ``4 * n_leads * length`` bytes).
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
N_FOLDS = 10


class PackError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EcgRecord:
    id: str
    sampling_rate_hz: int
    leads: np.ndarray  # [n_leads, length] float32
    labels: np.ndarray  # [C] uint8 multi-hot

    def __post_init__(self):
        leads = np.asarray(self.leads, dtype=np.float32)
        if leads.ndim == 1:
            leads = leads[None, :]
        if leads.ndim != 2 or leads.shape[1] == 0:
            raise ValueError(f"record {self.id}: leads must be [n_leads, length>0]")
        if leads.shape[0] not in (1, 12):
            raise ValueError(f"record {self.id}: n_leads must be 1 or 12, got {leads.shape[0]}")
        labels = np.asarray(self.labels)
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"record {self.id}: labels must be 0/1")
        object.__setattr__(self, "leads", leads)
        object.__setattr__(self, "labels", labels.astype(np.uint8))

    @property
    def n_leads(self) -> int:
        return self.leads.shape[0]

    @property
    def length(self) -> int:
        return self.leads.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EcgRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.leads.shape == other.leads.shape
            and self.leads.tobytes() == other.leads.tobytes()
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class ManifestEntry:
    id: str
    file: str
    labels: list[int]
    fold: int


@dataclass
class DatasetManifest:
    label_names: list[str]
    sampling_rate_hz: int
    n_leads: int
    length: int
    records: list[ManifestEntry] = field(default_factory=list)

    @property
    def fold_of(self) -> dict[str, int]:
        return {r.id: r.fold for r in self.records}

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def to_json(self) -> dict:
        return {
            "label_names": list(self.label_names),
            "sampling_rate_hz": self.sampling_rate_hz,
            "n_leads": self.n_leads,
            "length": self.length,
            "records": [
                {"id": r.id, "file": r.file, "labels": list(map(int, r.labels)), "fold": int(r.fold)}
                for r in self.records
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        return cls(
            label_names=list(obj["label_names"]),
            sampling_rate_hz=int(obj["sampling_rate_hz"]),
            n_leads=int(obj["n_leads"]),
            length=int(obj["length"]),
            records=[
                ManifestEntry(str(r["id"]), str(r["file"]), [int(v) for v in r["labels"]], int(r["fold"]))
                for r in obj["records"]
            ],
        )


@dataclass
class Dataset:
    """A loaded pack: manifest plus records in manifest order."""

    manifest: DatasetManifest
    records: list[EcgRecord]

    def fold_indices(self, folds) -> list[int]:
        wanted = {folds} if isinstance(folds, int) else set(folds)
        return [i for i, r in enumerate(self.manifest.records) if r.fold in wanted]

    def signals(self, indices) -> np.ndarray:
        return np.stack([self.records[i].leads for i in indices])

    def labels(self, indices) -> np.ndarray:
        return np.stack([self.records[i].labels for i in indices]).astype(np.float32)


def build_manifest(records, label_names, folds, file_pattern: str = "{id}.f32") -> DatasetManifest:
    if not records:
        return DatasetManifest(list(label_names), 0, 0, 0, [])
    first = records[0]
    for r in records:
        if (r.n_leads, r.length, r.sampling_rate_hz, len(r.labels)) != (
            first.n_leads, first.length, first.sampling_rate_hz, len(label_names)
        ):
            raise PackError(f"record {r.id}: inconsistent with dataset shape")
    entries = [
        ManifestEntry(r.id, file_pattern.format(id=r.id), [int(v) for v in r.labels], int(f))
        for r, f in zip(records, folds)
    ]
    return DatasetManifest(list(label_names), first.sampling_rate_hz, first.n_leads, first.length, entries)


def load_pack(path) -> Dataset:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise PackError(f"missing manifest: {mpath}")
    try:
        manifest = DatasetManifest.from_json(json.loads(mpath.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise PackError(f"malformed manifest {mpath}: {e}") from e

    expected = 4 * manifest.n_leads * manifest.length
    records = []
    for entry in manifest.records:
        if not 1 <= entry.fold <= N_FOLDS:
            raise PackError(f"record {entry.id}: fold {entry.fold} outside 1..{N_FOLDS}")
        fpath = path / entry.file
        if not fpath.is_file():
            raise PackError(f"record {entry.id}: missing file {entry.file}")
        raw = fpath.read_bytes()
        if len(raw) != expected:
            raise PackError(
                f"record {entry.id}: {entry.file} has {len(raw)} bytes, expected {expected}"
            )
        leads = np.frombuffer(raw, dtype="<f4").reshape(manifest.n_leads, manifest.length)
        records.append(
            EcgRecord(entry.id, manifest.sampling_rate_hz, leads.astype(np.float32), np.array(entry.labels))
        )
    return Dataset(manifest, records)


def save_pack(manifest: DatasetManifest, records, path) -> None:
    """Write a pack; the target directory is replaced atomically via rename."""
    path = Path(path)
    if len(records) != len(manifest.records):
        raise PackError("manifest and record list differ in length")
    for entry, rec in zip(manifest.records, records):
        if entry.id != rec.id or list(entry.labels) != [int(v) for v in rec.labels]:
            raise PackError(f"record {rec.id}: does not match manifest entry {entry.id}")
        if rec.leads.shape != (manifest.n_leads, manifest.length):
            raise PackError(f"record {rec.id}: shape {rec.leads.shape} does not match manifest")

    parent = path.parent if str(path.parent) else Path(".")
    try:
        parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=parent))
    except OSError as e:
        raise PackError(f"cannot write pack at {path}: {e}") from e
    try:
        for entry, rec in zip(manifest.records, records):
            (tmp / entry.file).write_bytes(rec.leads.astype("<f4").tobytes())
        (tmp / MANIFEST).write_text(
            json.dumps(manifest.to_json(), indent=1) + "\n", encoding="utf-8"
        )
        if path.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=parent))
            os.replace(path, old / "pack")
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except OSError as e:
        shutil.rmtree(tmp, ignore_errors=True)
        raise PackError(f"cannot write pack at {path}: {e}") from e


def select_lead(record: EcgRecord, lead_index: int) -> EcgRecord:
    if not 0 <= lead_index < record.n_leads:
        raise IndexError(f"lead index {lead_index} out of range for {record.n_leads} leads")
    return replace(record, leads=record.leads[lead_index : lead_index + 1].copy())


def fix_length(record: EcgRecord, target_len: int) -> EcgRecord:
    """Center-crop longer records; zero-pad shorter ones at the end."""
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    n = record.length
    if n == target_len:
        return record
    if n > target_len:
        start = (n - target_len) // 2
        leads = record.leads[:, start : start + target_len].copy()
    else:
        leads = np.zeros((record.n_leads, target_len), dtype=np.float32)
        leads[:, :n] = record.leads
    return replace(record, leads=leads)


def stratified_folds(labels, k: int = N_FOLDS, seed: int = 0) -> np.ndarray:
    """Iterative stratification for multi-label data; returns folds 1..k.

    Records are shuffled by ``seed`` first, then repeatedly the rarest label
    among unassigned records is distributed: each of its records goes to the
    fold with the greatest remaining need for that label (ties: larger total
    remaining capacity, then lower fold index). Records without any label are
    dealt last to the fold with the most remaining capacity. Fold capacities
    are fixed up front so sizes differ by at most one.
    """
    Y = np.asarray(labels, dtype=np.int64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, c = Y.shape
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"fewer records ({n}) than folds ({k})")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)

    capacity = np.full(k, n // k, dtype=np.int64)
    capacity[: n % k] += 1
    total_per_label = Y.sum(axis=0)
    need = np.floor(np.outer(capacity / n, total_per_label)).astype(np.int64)
    # distribute rounding remainders so per-label needs sum to the label total
    for j in range(c):
        short = total_per_label[j] - need[:, j].sum()
        frac = capacity / n * total_per_label[j] - need[:, j]
        for f in np.lexsort((np.arange(k), -frac))[:short]:
            need[f, j] += 1

    fold = np.zeros(n, dtype=np.int64)
    unassigned = np.ones(n, dtype=bool)
    unassigned_order = order

    def place(i, j=None):
        open_folds = np.flatnonzero(capacity > 0)
        if j is None:
            key = (open_folds, -capacity[open_folds])
        else:
            key = (open_folds, -capacity[open_folds], -need[open_folds, j])
        f = open_folds[np.lexsort(key)[0]]
        fold[i] = f + 1
        capacity[f] -= 1
        need[f] -= Y[i]
        unassigned[i] = False

    while unassigned.any():
        remaining = unassigned_order[unassigned[unassigned_order]]
        counts = Y[remaining].sum(axis=0)
        present = np.flatnonzero(counts > 0)
        if present.size == 0:
            for i in remaining:
                place(i)
            break
        j = present[np.argmin(counts[present])]
        for i in remaining[Y[remaining, j] == 1]:
            place(i, j)
    return fold
