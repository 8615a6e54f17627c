"""Dataset and curated-set file formats.

A dataset file is UTF-8 JSON lines: one header object (format tag, version,
``state_dim``, ``action_space``, ``count``) followed by one object per
trajectory with ``states``, ``actions``, ``mask`` and ``ret``. Floats are
written with Python's shortest round-trip repr, so load(save(ds)) == ds bit for
bit. The content hash is the SHA-256 of every byte after the header line.

A curated file is a single JSON object naming its source by that hash.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .data import ActionSpace, CuratedDataset, Trajectory, TrajectoryDataset

DATASET_FORMAT = "iwsft-dataset"
CURATED_FORMAT = "iwsft-curated"
VERSION = 1


class IntegrityError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _traj_record(t: Trajectory) -> dict:
    return {
        "states": t.states.tolist(),
        "actions": t.actions.tolist(),
        "mask": t.mask.tolist(),
        "ret": t.ret,
    }


def dataset_body(ds: TrajectoryDataset) -> bytes:
    return "".join(_dumps(_traj_record(t)) + "\n" for t in ds).encode("utf-8")


def content_hash(ds: TrajectoryDataset) -> str:
    return hashlib.sha256(dataset_body(ds)).hexdigest()


def dumps_dataset(ds: TrajectoryDataset) -> bytes:
    header = {
        "format": DATASET_FORMAT,
        "version": VERSION,
        "state_dim": ds.state_dim,
        "action_space": ds.action_space.to_dict(),
        "count": len(ds),
    }
    return (_dumps(header) + "\n").encode("utf-8") + dataset_body(ds)


def loads_dataset(blob: bytes) -> tuple[TrajectoryDataset, str]:
    """Parse a dataset file; returns the dataset and its body hash."""
    head, sep, body = blob.partition(b"\n")
    header = json.loads(head.decode("utf-8"))
    if header.get("format") != DATASET_FORMAT:
        raise ValueError("not an iwsft dataset file")
    if header.get("version") != VERSION:
        raise ValueError(f"unsupported dataset version {header.get('version')}")
    space = ActionSpace.from_dict(header["action_space"])
    state_dim = int(header["state_dim"])
    trajs = []
    for line in body.decode("utf-8").splitlines():
        rec = json.loads(line)
        states = np.array(rec["states"], dtype=np.float64).reshape(-1, state_dim)
        dtype = np.int64 if space.is_discrete else np.float64
        actions = np.array(rec["actions"], dtype=dtype)
        if not space.is_discrete:
            actions = actions.reshape(-1, space.size)
        trajs.append(Trajectory(states, actions, rec["ret"], np.array(rec["mask"], dtype=np.int8)))
    if len(trajs) != header["count"]:
        raise ValueError(f"header says {header['count']} trajectories, found {len(trajs)}")
    return TrajectoryDataset(tuple(trajs), state_dim, space), hashlib.sha256(body).hexdigest()


def save_dataset(ds: TrajectoryDataset, path) -> str:
    Path(path).write_bytes(dumps_dataset(ds))
    return content_hash(ds)


def load_dataset(path) -> tuple[TrajectoryDataset, str]:
    return loads_dataset(Path(path).read_bytes())


def dumps_curated(cd: CuratedDataset, source_hash: str) -> bytes:
    obj = {
        "format": CURATED_FORMAT,
        "version": VERSION,
        "source_hash": source_hash,
        "cutoffs": list(cd.cutoffs),
        "percentiles": None if cd.percentiles is None else list(cd.percentiles),
        "entries": [list(e) for e in cd.entries],
    }
    return (_dumps(obj) + "\n").encode("utf-8")


def save_curated(cd: CuratedDataset, source_hash: str, path) -> None:
    Path(path).write_bytes(dumps_curated(cd, source_hash))


def load_curated(path, source: TrajectoryDataset, source_hash: str) -> CuratedDataset:
    """Load a curated file, checking it was built from ``source``."""
    obj = json.loads(Path(path).read_text("utf-8"))
    if obj.get("format") != CURATED_FORMAT:
        raise ValueError("not an iwsft curated file")
    if obj["source_hash"] != source_hash:
        raise IntegrityError(
            f"curated set was built from {obj['source_hash'][:12]}..., dataset hash is {source_hash[:12]}..."
        )
    cd = CuratedDataset(source, tuple(tuple(e) for e in obj["entries"]), tuple(obj["cutoffs"]), obj["percentiles"])
    if not cd.is_consistent():
        raise IntegrityError("curated multiplicities disagree with the stored cutoffs")
    return cd
