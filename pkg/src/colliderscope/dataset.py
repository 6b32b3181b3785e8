"""Deterministic train/val/test splitting, balancing by replication, and
dataset emission.

Splits are stratified per class with a seeded shuffle; balancing tops up
minority classes by cycling through their entries (clones become separate
identical image files).  Directory layout:
``<out>/<split>/<class_name>/<event_id>[_rN].png``.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .kinematics import Event
from .render import CanvasSpec, encode_png, render_event

SPLIT_NAMES = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    event_id: str
    class_id: int
    image_path: str
    replication_index: int = 0


@dataclass
class DatasetManifest:
    ratios: tuple[float, float, float]
    seed: int
    class_names: dict[int, str]
    splits: dict[str, list[ManifestEntry]] = field(
        default_factory=lambda: {name: [] for name in SPLIT_NAMES})

    def counts(self, split: str) -> dict[int, int]:
        out: dict[int, int] = {}
        for entry in self.splits[split]:
            out[entry.class_id] = out.get(entry.class_id, 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "format_version": "1",
            "ratios": list(self.ratios),
            "seed": self.seed,
            "class_names": {str(k): v for k, v in sorted(self.class_names.items())},
            "splits": {
                name: [{"event_id": e.event_id, "class_id": e.class_id,
                        "image_path": e.image_path,
                        "replication_index": e.replication_index}
                       for e in entries]
                for name, entries in self.splits.items()
            },
            "counts": {name: {str(k): v for k, v in self.counts(name).items()}
                       for name in SPLIT_NAMES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        manifest = cls(
            ratios=tuple(d["ratios"]),
            seed=d["seed"],
            class_names={int(k): v for k, v in d["class_names"].items()},
        )
        for name in SPLIT_NAMES:
            manifest.splits[name] = [
                ManifestEntry(event_id=e["event_id"], class_id=e["class_id"],
                              image_path=e["image_path"],
                              replication_index=e["replication_index"])
                for e in d["splits"].get(name, [])]
        return manifest

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _image_path(split: str, class_name: str, event_id: str,
                replication_index: int) -> str:
    stem = event_id if replication_index == 0 \
        else f"{event_id}_r{replication_index}"
    return f"{split}/{class_name}/{stem}.png"


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation; each count is within 1 of ratio*n."""
    raw = [r * n for r in ratios]
    counts = [int(x) for x in raw]
    remainder = n - sum(counts)
    by_fraction = sorted(range(len(ratios)),
                         key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_fraction[:remainder]:
        counts[i] += 1
    return counts


def split(events: Sequence[Event], ratios=(0.8, 0.1, 0.1), seed: int = 0,
          class_names: Optional[Mapping[int, str]] = None,
          val_count: Optional[int] = None,
          test_count: Optional[int] = None) -> DatasetManifest:
    """Stratified per-class split into train/val/test.

    Events must carry ``truth_class``.  With ``val_count``/``test_count``
    given, those splits get exactly that many events per class and train
    takes the rest; otherwise the ratios are applied per class with
    largest-remainder rounding.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {ratios}")
    if len(ratios) != 3:
        raise DatasetError("expected exactly three ratios (train, val, test)")
    by_class: dict[int, list[str]] = {}
    for ev in events:
        if ev.truth_class is None:
            raise DatasetError(f"event {ev.id} has no class label")
        by_class.setdefault(ev.truth_class, []).append(ev.id)
    if class_names is None:
        class_names = {c: str(c) for c in by_class}
    manifest = DatasetManifest(ratios=tuple(ratios), seed=seed,
                               class_names=dict(class_names))
    for class_id in sorted(by_class):
        ids = sorted(by_class[class_id])
        if len(set(ids)) != len(ids):
            raise DatasetError(f"duplicate event ids in class {class_id}")
        if len(ids) < 3:
            raise DatasetError(
                f"class {class_id} has {len(ids)} events, need at least 3")
        rng = np.random.default_rng(np.random.SeedSequence((seed, class_id)))
        rng.shuffle(ids)
        if val_count is not None or test_count is not None:
            n_val = val_count or 0
            n_test = test_count or 0
            if n_val + n_test >= len(ids):
                raise DatasetError(
                    f"class {class_id}: val+test counts exceed class size")
            counts = [len(ids) - n_val - n_test, n_val, n_test]
        else:
            counts = _allocate(len(ids), ratios)
        name = manifest.class_names.get(class_id, str(class_id))
        cursor = 0
        for split_name, count in zip(SPLIT_NAMES, counts):
            for event_id in ids[cursor:cursor + count]:
                manifest.splits[split_name].append(ManifestEntry(
                    event_id=event_id, class_id=class_id,
                    image_path=_image_path(split_name, name, event_id, 0)))
            cursor += count
    return manifest


def balance_by_replication(manifest: DatasetManifest,
                           targets: Optional[Mapping[int, int] | int] = None,
                           seed: Optional[int] = None) -> DatasetManifest:
    """Top up under-populated train classes by cloning entries.

    ``targets`` maps class_id to the desired train count (an int applies
    to every class; default: the largest class count).  Classes at or
    above target are left untouched.  Clones cycle through the class in
    seeded-shuffled order with increasing replication_index.
    """
    counts = manifest.counts("train")
    if not counts:
        raise DatasetError("train split is empty")
    for class_id, n in counts.items():
        if n == 0:
            raise DatasetError(f"class {class_id} has no train entries")
    if targets is None:
        targets = max(counts.values())
    if isinstance(targets, int):
        targets = {c: targets for c in counts}
    if seed is None:
        seed = manifest.seed + 1
    balanced = DatasetManifest(ratios=manifest.ratios, seed=manifest.seed,
                               class_names=dict(manifest.class_names))
    balanced.splits["val"] = list(manifest.splits["val"])
    balanced.splits["test"] = list(manifest.splits["test"])
    train = list(manifest.splits["train"])
    for class_id in sorted(counts):
        target = targets.get(class_id, counts[class_id])
        deficit = target - counts[class_id]
        if deficit <= 0:
            continue
        entries = [e for e in train if e.class_id == class_id]
        order = np.random.default_rng(
            np.random.SeedSequence((seed, class_id))).permutation(len(entries))
        clone_counts = [0] * len(entries)
        name = manifest.class_names.get(class_id, str(class_id))
        for k in range(deficit):
            i = int(order[k % len(entries)])
            clone_counts[i] += 1
            source = entries[i]
            train.append(ManifestEntry(
                event_id=source.event_id, class_id=class_id,
                image_path=_image_path("train", name, source.event_id,
                                       clone_counts[i]),
                replication_index=clone_counts[i]))
    balanced.splits["train"] = train
    return balanced


@dataclass
class WriteSummary:
    images_written: int
    per_split: dict[str, dict[int, int]]
    elapsed_seconds: float


def _render_png(event: Event, spec: CanvasSpec) -> bytes:
    return encode_png(render_event(event, spec))


def _write_entries(args) -> int:
    entries, events_by_id, spec_dict, out_dir = args
    spec = CanvasSpec.from_dict(spec_dict)
    cache: dict[str, bytes] = {}
    written = 0
    for entry in entries:
        data = cache.get(entry.event_id)
        if data is None:
            data = _render_png(events_by_id[entry.event_id], spec)
            cache[entry.event_id] = data
        path = Path(out_dir) / entry.image_path
        path.write_bytes(data)
        written += 1
    return written


def write_dataset(manifest: DatasetManifest, events_by_id: Mapping[str, Event],
                  spec: CanvasSpec, out_dir: Path,
                  workers: int = 1) -> WriteSummary:
    """Render every manifest entry to a PNG under ``out_dir``.

    Output bytes depend only on (event, spec), so the worker count never
    changes the produced files.  The manifest lands next to them as
    ``manifest.json``.
    """
    start = time.monotonic()
    out_dir = Path(out_dir)
    all_entries: list[ManifestEntry] = []
    for split_name in SPLIT_NAMES:
        for entry in manifest.splits[split_name]:
            if entry.event_id not in events_by_id:
                raise DatasetError(f"manifest references unknown event "
                                   f"{entry.event_id!r}")
            all_entries.append(entry)
    dirs = {(out_dir / e.image_path).parent for e in all_entries}
    for d in sorted(dirs):
        d.mkdir(parents=True, exist_ok=True)
    # also create empty split dirs so the layout is complete
    for split_name in SPLIT_NAMES:
        (out_dir / split_name).mkdir(parents=True, exist_ok=True)

    if workers <= 1 or len(all_entries) < 2:
        written = _write_entries((all_entries, dict(events_by_id),
                                  spec.to_dict(), str(out_dir)))
    else:
        # group by event id so each worker's render cache is effective
        by_event: dict[str, list[ManifestEntry]] = {}
        for entry in all_entries:
            by_event.setdefault(entry.event_id, []).append(entry)
        groups = sorted(by_event.values(), key=lambda g: g[0].event_id)
        chunks: list[list[ManifestEntry]] = [[] for _ in range(workers)]
        for i, group in enumerate(groups):
            chunks[i % workers].extend(group)
        tasks = [(chunk,
                  {eid: events_by_id[eid]
                   for eid in sorted({e.event_id for e in chunk})},
                  spec.to_dict(), str(out_dir))
                 for chunk in chunks if chunk]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            written = sum(pool.map(_write_entries, tasks))
    (out_dir / "manifest.json").write_text(manifest.to_json(),
                                           encoding="utf-8")
    elapsed = time.monotonic() - start
    return WriteSummary(
        images_written=written,
        per_split={name: manifest.counts(name) for name in SPLIT_NAMES},
        elapsed_seconds=elapsed,
    )
