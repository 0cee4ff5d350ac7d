"""Labeled example sets and their binary and CSV file formats.

Binary layout (little-endian):
    header  8s magic | u16 version | u64 count | u32 observation length
    records count x packed struct:
        obs f8[obs_len] | steer f8 | brake u1 | labels f8[12]
        | source_iteration i4 | tag u1 | episode i8 | step i4
        [| p_safe f8]    ranked dumps only
"""

import csv
import pathlib
import struct
from dataclasses import dataclass

import numpy as np

from safedagger.errors import DatasetFormatError
from safedagger.models import CONTROLLER_CODES, CONTROLLER_NAMES, LABEL_NAMES
from safedagger.perception import OBS_SIZE

DATASET_MAGIC = b"SDGDATA\x00"
RANKED_MAGIC = b"SDGRANK\x00"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sHQI")


def record_dtype(obs_len: int = OBS_SIZE, with_prob: bool = False) -> np.dtype:
    fields = [
        ("obs", "<f8", (obs_len,)),
        ("steer", "<f8"),
        ("brake", "u1"),
        ("labels", "<f8", (len(LABEL_NAMES),)),
        ("source_iteration", "<i4"),
        ("tag", "u1"),
        ("episode", "<i8"),
        ("step", "<i4"),
    ]
    if with_prob:
        fields.append(("p_safe", "<f8"))
    return np.dtype(fields)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented, immutable set of labeled examples."""
    obs: np.ndarray
    steer: np.ndarray
    brake: np.ndarray
    labels: np.ndarray
    source_iteration: np.ndarray
    tag: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        n = len(self.obs)
        for name in ("steer", "brake", "labels", "source_iteration", "tag", "episode", "step"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column '{name}' has {len(getattr(self, name))} rows, expected {n}")
        for name in self.__dataclass_fields__:
            getattr(self, name).flags.writeable = False

    def __len__(self):
        return len(self.obs)

    @property
    def obs_len(self) -> int:
        return self.obs.shape[1]

    @classmethod
    def empty(cls, obs_len: int = OBS_SIZE) -> "Dataset":
        return cls.from_records(np.zeros(0, dtype=record_dtype(obs_len)))

    @classmethod
    def from_records(cls, rec: np.ndarray) -> "Dataset":
        obs_len = rec.dtype["obs"].shape[0]
        return cls(
            obs=np.array(rec["obs"], dtype=np.float64).reshape(len(rec), obs_len),
            steer=np.array(rec["steer"], dtype=np.float64),
            brake=np.array(rec["brake"], dtype=np.uint8),
            labels=np.array(rec["labels"], dtype=np.float64).reshape(len(rec), len(LABEL_NAMES)),
            source_iteration=np.array(rec["source_iteration"], dtype=np.int32),
            tag=np.array(rec["tag"], dtype=np.uint8),
            episode=np.array(rec["episode"], dtype=np.int64),
            step=np.array(rec["step"], dtype=np.int32),
        )

    def to_records(self, p_safe: np.ndarray | None = None) -> np.ndarray:
        rec = np.zeros(len(self), dtype=record_dtype(self.obs_len, with_prob=p_safe is not None))
        rec["obs"] = self.obs
        rec["steer"] = self.steer
        rec["brake"] = self.brake
        rec["labels"] = self.labels
        rec["source_iteration"] = self.source_iteration
        rec["tag"] = self.tag
        rec["episode"] = self.episode
        rec["step"] = self.step
        if p_safe is not None:
            rec["p_safe"] = p_safe
        return rec

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(*(getattr(self, name)[idx] for name in self.__dataclass_fields__))

    def union(self, other: "Dataset") -> "Dataset":
        """Multiset union; provenance columns travel with their rows."""
        if len(self) and len(other) and self.obs_len != other.obs_len:
            raise ValueError("cannot merge datasets with different observation lengths")
        return Dataset(*(np.concatenate([getattr(self, name), getattr(other, name)])
                         for name in self.__dataclass_fields__))

    def canonical_order(self) -> np.ndarray:
        return np.lexsort((self.step, self.episode, self.tag, self.source_iteration))

    def canonical_bytes(self) -> bytes:
        """Record bytes in canonical order; equal iff the example multisets are equal."""
        return self.take(self.canonical_order()).to_records().tobytes()

    def tags(self) -> list[str]:
        return [CONTROLLER_NAMES[int(t)] for t in self.tag]

    def count_by_iteration(self) -> dict[int, int]:
        its, counts = np.unique(self.source_iteration, return_counts=True)
        return {int(i): int(c) for i, c in zip(its, counts)}


def tag_code(tag: str) -> int:
    return CONTROLLER_CODES[tag]


def _write(path: pathlib.Path | str, magic: bytes, rec: np.ndarray, obs_len: int) -> None:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(magic, FORMAT_VERSION, len(rec), obs_len))
        f.write(rec.tobytes())


def _read(path: pathlib.Path | str, magic: bytes, with_prob: bool) -> np.ndarray:
    data = pathlib.Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    got_magic, version, count, obs_len = HEADER.unpack_from(data, 0)
    if got_magic != magic:
        raise DatasetFormatError(f"{path}: bad magic {got_magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    dtype = record_dtype(obs_len, with_prob)
    expected = HEADER.size + count * dtype.itemsize
    if len(data) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes for {count} records, found {len(data)}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=HEADER.size).copy()


def save_dataset(dataset: Dataset, path: pathlib.Path | str) -> None:
    _write(path, DATASET_MAGIC, dataset.to_records(), dataset.obs_len)


def load_dataset(path: pathlib.Path | str) -> Dataset:
    return Dataset.from_records(_read(path, DATASET_MAGIC, with_prob=False))


def save_ranked(dataset: Dataset, p_safe: np.ndarray, path: pathlib.Path | str) -> None:
    _write(path, RANKED_MAGIC, dataset.to_records(np.asarray(p_safe, dtype=np.float64)), dataset.obs_len)


def load_ranked(path: pathlib.Path | str) -> tuple[Dataset, np.ndarray]:
    rec = _read(path, RANKED_MAGIC, with_prob=True)
    return Dataset.from_records(rec), np.array(rec["p_safe"])


def write_observation_csv(dataset: Dataset, path: pathlib.Path | str,
                          p_safe: np.ndarray | None = None) -> None:
    """One row per example: the flat observation, then the 12 labels."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"obs_{i}" for i in range(dataset.obs_len)] + list(LABEL_NAMES)
    if p_safe is not None:
        header.append("p_safe")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.obs[i]] + [repr(float(v)) for v in dataset.labels[i]]
            if p_safe is not None:
                row.append(repr(float(p_safe[i])))
            w.writerow(row)
