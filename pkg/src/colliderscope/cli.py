"""Command-line entry point wiring the pipeline end to end.

Subcommands: ``synth`` (generate labeled NDJSON events), ``ingest``
(validate a file), ``render`` (events to a split/balanced PNG dataset),
``train-ffn``, ``evaluate``, and ``report``.

Configuration comes from an optional JSON file plus flag overrides; one
global seed fans out to fixed per-stage seeds (split = seed, balancing =
seed + 1, network = seed + 2).  Every artifact-producing run writes its
resolved configuration next to the outputs.  Exit codes: 0 success,
1 data/validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ffn, metrics
from .dataset import (
    DatasetError,
    DatasetManifest,
    balance_by_replication,
    split,
    write_dataset,
)
from .ingest import IngestError, parse_events, scan_stream
from .kinematics import Event
from .render import CanvasSpec, SizeVariable
from .selection import (
    DIMUON_CLASS_NAMES,
    SelectionConfig,
    label_dimuon_event,
    select_complex_event,
)
from .synth import (
    COMPLEX_CLASS_NAMES,
    GeneratorSpec,
    generate_complex_events,
    generate_dimuon_events,
    write_ndjson,
)

RESOLVED_CONFIG_NAME = "config.resolved.json"


class CliConfigError(Exception):
    pass


class CliDataError(Exception):
    pass


# --- configuration ---------------------------------------------------------

_KNOWN_KEYS = {"seed", "mode", "canvas", "selection", "ratios", "val_count",
               "test_count", "balance", "features", "model", "workers",
               "class_names", "signal_class", "per_class"}


@dataclass
class PipelineConfig:
    seed: int = 0
    mode: str = "dimuon"
    canvas: Optional[dict] = None
    selection: dict = field(default_factory=dict)
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    val_count: Optional[int] = None
    test_count: Optional[int] = None
    balance: Optional[object] = None
    features: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    workers: int = 1
    class_names: Optional[dict[int, str]] = None
    signal_class: int = 0
    per_class: int = 100

    def __post_init__(self):
        if self.mode not in ("dimuon", "complex"):
            raise CliConfigError(f"mode must be dimuon or complex, "
                                 f"got {self.mode!r}")
        if len(self.ratios) != 3:
            raise CliConfigError("ratios needs 3 entries")
        if self.workers < 1:
            raise CliConfigError("workers must be >= 1")
        if self.per_class < 1:
            raise CliConfigError("per_class must be >= 1")

    # per-stage seeds derived from the one global seed
    @property
    def split_seed(self) -> int:
        return self.seed

    @property
    def balance_seed(self) -> int:
        return self.seed + 1

    @property
    def model_seed(self) -> int:
        return int(self.model.get("seed", self.seed + 2))

    def canvas_spec(self) -> CanvasSpec:
        d = dict(self.canvas or {})
        if "size_variable" not in d:
            d["size_variable"] = ("energy" if self.mode == "dimuon"
                                  else "pt")
        try:
            return CanvasSpec.from_dict(d)
        except (ValueError, KeyError) as exc:
            raise CliConfigError(f"canvas: {exc}") from exc

    def selection_config(self) -> SelectionConfig:
        try:
            return SelectionConfig.from_dict(self.selection)
        except ValueError as exc:
            raise CliConfigError(f"selection: {exc}") from exc

    def feature_spec(self) -> ffn.FeatureSpec:
        d = dict(self.features)
        d.setdefault("mode", self.mode)
        if d["mode"] == "complex":
            d.setdefault("max_jets", 6)
        try:
            return ffn.FeatureSpec.from_dict(d)
        except ValueError as exc:
            raise CliConfigError(f"features: {exc}") from exc

    def model_config(self, input_dim: int, n_classes: int) -> ffn.MlpConfig:
        d = dict(self.model)
        d.pop("seed", None)
        d["input_dim"] = input_dim
        d["n_classes"] = n_classes
        d["seed"] = self.model_seed
        try:
            return ffn.MlpConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise CliConfigError(f"model: {exc}") from exc

    def resolve_class_names(self) -> dict[int, str]:
        if self.class_names is not None:
            return dict(self.class_names)
        if self.mode == "dimuon":
            return dict(DIMUON_CLASS_NAMES)
        return {i: name for i, name in enumerate(COMPLEX_CLASS_NAMES)}

    def balance_targets(self) -> tuple[bool, Optional[object]]:
        """Returns (enabled, targets for balance_by_replication)."""
        if self.balance is None or self.balance is False:
            return False, None
        if self.balance == "max" or self.balance is True:
            return True, None
        if isinstance(self.balance, int):
            return True, self.balance
        if isinstance(self.balance, dict):
            try:
                return True, {int(k): int(v)
                              for k, v in self.balance.items()}
            except ValueError as exc:
                raise CliConfigError(f"balance: {exc}") from exc
        raise CliConfigError(f"balance must be null, \"max\", an int, or "
                             f"a class->count map, got {self.balance!r}")

    def to_resolved_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stage_seeds": {"split": self.split_seed,
                            "balance": self.balance_seed,
                            "model": self.model_seed},
            "mode": self.mode,
            "canvas": self.canvas_spec().to_dict(),
            "selection": self.selection_config().to_dict(),
            "ratios": list(self.ratios),
            "val_count": self.val_count,
            "test_count": self.test_count,
            "balance": self.balance,
            "features": self.feature_spec().to_dict(),
            "model": dict(self.model),
            "workers": self.workers,
            "class_names": {str(k): v
                            for k, v in self.resolve_class_names().items()},
            "signal_class": self.signal_class,
            "per_class": self.per_class,
        }


def load_config(path: Optional[str], args: argparse.Namespace
                ) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise CliConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise CliConfigError(f"{path}: config must be a JSON object")
        unknown = set(data) - _KNOWN_KEYS
        if unknown:
            raise CliConfigError(
                f"{path}: unknown config keys: {sorted(unknown)}")
    for name in ("seed", "mode", "workers", "per_class", "signal_class"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            data[name] = value
    if "ratios" in data:
        data["ratios"] = tuple(data["ratios"])
    if "class_names" in data and data["class_names"] is not None:
        data["class_names"] = {int(k): v
                               for k, v in data["class_names"].items()}
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise CliConfigError(str(exc)) from exc


def _write_resolved_config(config: PipelineConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_text(json.dumps(config.to_resolved_dict(), indent=2,
                               sort_keys=True) + "\n", encoding="utf-8")


def _read_events(path: str) -> list[Event]:
    try:
        with open(path, "rb") as fh:
            return list(parse_events(fh))
    except OSError as exc:
        raise CliDataError(f"cannot read events {path}: {exc}") from exc
    except IngestError as exc:
        raise CliDataError(f"{path}: {exc}") from exc


# --- subcommands -----------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    spec = GeneratorSpec(seed=config.seed)
    names = config.resolve_class_names()
    if config.mode == "dimuon":
        events = generate_dimuon_events(spec, config.per_class)
    else:
        events = generate_complex_events(spec, config.per_class)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        count = write_ndjson(events, fh,
                             class_names=[names[k] for k in sorted(names)])
    sidecar = out.with_name(out.name + ".config.json")
    sidecar.write_text(json.dumps(config.to_resolved_dict(), indent=2,
                                  sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {count} events ({config.mode}, "
          f"{config.per_class} per class) to {out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    try:
        with open(args.events, "rb") as fh:
            report = scan_stream(fh)
    except OSError as exc:
        raise CliDataError(f"cannot read {args.events}: {exc}") from exc
    print(f"parsed: {report.parsed}")
    print(f"rejected: {report.rejected}")
    print(f"unknown fields: {report.unknown_fields}")
    for violation in report.first_violations:
        print(f"  line {violation['line']}: {violation['reason']}")
    if report.rejected and not args.lenient:
        return 1
    return 0


def _labeled_events(events: list[Event], config: PipelineConfig
                    ) -> tuple[list[Event], int]:
    """Apply mode-specific selection/labeling; returns (kept, dropped)."""
    kept: list[Event] = []
    dropped = 0
    if config.mode == "dimuon":
        for ev in events:
            try:
                label = label_dimuon_event(ev)
            except ValueError:
                dropped += 1
                continue
            if ev.truth_class is None:
                ev = Event(id=ev.id, objects=ev.objects, met=ev.met,
                           truth_class=label)
            kept.append(ev)
        return kept, dropped
    selection = config.selection_config()
    for ev in events:
        if ev.truth_class is None:
            raise CliDataError(
                f"event {ev.id}: complex mode needs truth_class labels")
        selected = select_complex_event(ev, selection)
        if selected is None:
            dropped += 1
            continue
        kept.append(selected)
    return kept, dropped


def cmd_render(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    events = _read_events(args.events)
    kept, dropped = _labeled_events(events, config)
    if not kept:
        raise CliDataError("no events left after selection")
    try:
        manifest = split(kept, ratios=config.ratios, seed=config.split_seed,
                         class_names=config.resolve_class_names(),
                         val_count=config.val_count,
                         test_count=config.test_count)
        enabled, targets = config.balance_targets()
        if enabled:
            manifest = balance_by_replication(manifest, targets,
                                              seed=config.balance_seed)
    except DatasetError as exc:
        raise CliDataError(str(exc)) from exc
    out_dir = Path(args.out)
    _write_resolved_config(config, out_dir)
    if args.dry_run:
        (out_dir / "manifest.json").write_text(manifest.to_json(),
                                               encoding="utf-8")
        print(f"dry run: manifest only, {dropped} events dropped")
    else:
        events_by_id = {ev.id: ev for ev in kept}
        summary = write_dataset(manifest, events_by_id,
                                config.canvas_spec(), out_dir,
                                workers=config.workers)
        print(f"wrote {summary.images_written} images in "
              f"{summary.elapsed_seconds:.1f}s ({dropped} events dropped)")
    for name in ("train", "val", "test"):
        counts = manifest.counts(name)
        print(f"  {name}: {sum(counts.values())} {dict(counts)}")
    return 0


def _load_manifest(data_dir: str) -> DatasetManifest:
    path = Path(data_dir) / "manifest.json"
    try:
        return DatasetManifest.load(path)
    except OSError as exc:
        raise CliDataError(f"cannot read manifest {path}: {exc}") from exc


def _features_for_split(manifest: DatasetManifest, split_name: str,
                        events_by_id: dict[str, Event],
                        spec: ffn.FeatureSpec
                        ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    entries = manifest.splits[split_name]
    if not entries:
        raise CliDataError(f"manifest split {split_name!r} is empty")
    missing = [e.event_id for e in entries
               if e.event_id not in events_by_id]
    if missing:
        raise CliDataError(f"events file lacks ids referenced by the "
                           f"manifest, first: {missing[0]!r}")
    x = np.stack([ffn.featurize(events_by_id[e.event_id], spec)
                  for e in entries])
    y = np.array([e.class_id for e in entries], dtype=np.int64)
    ids = [e.event_id for e in entries]
    return x, y, ids


def cmd_train_ffn(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    manifest = _load_manifest(args.data)
    events_by_id = {ev.id: ev for ev in _read_events(args.events)}
    feature_spec = config.feature_spec()
    n_classes = max(manifest.class_names) + 1
    train_x, train_y, _ = _features_for_split(manifest, "train",
                                              events_by_id, feature_spec)
    val_x, val_y, _ = _features_for_split(manifest, "val", events_by_id,
                                          feature_spec)
    model_config = config.model_config(feature_spec.input_dim, n_classes)
    try:
        model, history = ffn.train(train_x, train_y, val_x, val_y,
                                   model_config)
    except ffn.FfnError as exc:
        raise CliDataError(str(exc)) from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(config, out_dir)
    ffn.save_model(model, out_dir / "model.bin")
    (out_dir / "history.csv").write_text(ffn.history_to_csv(history),
                                         encoding="utf-8")
    _plot_history(history, out_dir / "history.png")
    last = history[-1]
    print(f"trained {len(history)} epochs: val_acc={last.val_acc:.4f} "
          f"val_loss={last.val_loss:.4f}")
    return 0


def _plot_history(history: list[ffn.EpochStats], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [row.epoch for row in history]
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_acc.plot(epochs, [row.train_acc for row in history], label="train")
    ax_acc.plot(epochs, [row.val_acc for row in history], label="val")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    ax_loss.plot(epochs, [row.train_loss for row in history], label="train")
    ax_loss.plot(epochs, [row.val_loss for row in history], label="val")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _emit_metrics(out_dir: Path, preds: np.ndarray, labels: np.ndarray,
                  n_classes: int, names: list[str],
                  signal_class: int) -> None:
    cm = metrics.confusion(preds, labels, n_classes)
    norm = metrics.normalize_rows(cm)
    (out_dir / "confusion.csv").write_text(
        metrics.matrix_to_csv(cm.counts, names), encoding="utf-8")
    (out_dir / "confusion_normalized.csv").write_text(
        metrics.matrix_to_csv(norm, names), encoding="utf-8")
    metrics.save_heatmap(cm.counts, out_dir / "confusion.png",
                         class_names=names, title="confusion (counts)")
    metrics.save_heatmap(norm, out_dir / "confusion_normalized.png",
                         class_names=names,
                         title="confusion (row-normalized)")
    acc = metrics.accuracy(cm)
    lines = [f"accuracy,{acc:.6f}"]
    print(f"accuracy: {acc:.4f}")
    if n_classes >= 2:
        try:
            eff = metrics.signal_background_efficiency(cm, signal_class)
        except metrics.MetricsError:
            eff = None
        if eff is not None:
            lines.append(f"signal_background_efficiency,{eff:.6f}")
            lines.append(f"signal_class,{signal_class}")
            print(f"signal-vs-background efficiency "
                  f"(mean of signal recall and pooled-background recall, "
                  f"equal priors; signal={names[signal_class]}): "
                  f"{eff:.4f}")
    (out_dir / "summary.csv").write_text("metric,value\n"
                                         + "\n".join(lines) + "\n",
                                         encoding="utf-8")


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    manifest = _load_manifest(args.data)
    events_by_id = {ev.id: ev for ev in _read_events(args.events)}
    feature_spec = config.feature_spec()
    try:
        model = ffn.load_model(Path(args.model))
    except (OSError, ffn.FfnError) as exc:
        raise CliDataError(f"cannot load model {args.model}: {exc}") from exc
    x, y, ids = _features_for_split(manifest, args.split, events_by_id,
                                    feature_spec)
    preds, probs = ffn.predict(model, x)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(config, out_dir)
    (out_dir / "predictions.csv").write_text(
        metrics.predictions_to_csv(ids, preds, probs), encoding="utf-8")
    names_map = manifest.class_names
    names = [names_map.get(i, f"class{i}")
             for i in range(model.config.n_classes)]
    _emit_metrics(out_dir, preds, y, model.config.n_classes, names,
                  config.signal_class)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    try:
        text = Path(args.predictions).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliDataError(f"cannot read predictions: {exc}") from exc
    try:
        ids, preds, probs = metrics.parse_predictions_csv(text)
    except metrics.MetricsError as exc:
        raise CliDataError(str(exc)) from exc
    truth_by_id = {ev.id: ev.truth_class
                   for ev in _read_events(args.events)}
    labels = []
    for eid in ids:
        label = truth_by_id.get(eid)
        if label is None:
            raise CliDataError(f"no truth label for event {eid!r}")
        labels.append(label)
    n_classes = probs.shape[1]
    names_map = config.resolve_class_names()
    names = [names_map.get(i, f"class{i}") for i in range(n_classes)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(config, out_dir)
    _emit_metrics(out_dir, preds, np.asarray(labels), n_classes, names,
                  config.signal_class)
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colliderscope",
        description="Collision-event image pipeline: synthesize, validate, "
                    "render, train, and report.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--mode", choices=("dimuon", "complex"),
                       help="event family")

    p_synth = sub.add_parser("synth", help="generate labeled synthetic "
                                           "events as NDJSON")
    add_common(p_synth)
    p_synth.add_argument("--out", required=True, help="output events file")
    p_synth.add_argument("--per-class", type=int, dest="per_class",
                         help="events per class")
    p_synth.set_defaults(func=cmd_synth)

    p_ingest = sub.add_parser("ingest", help="validate an event file")
    p_ingest.add_argument("events", help="NDJSON events file")
    p_ingest.add_argument("--lenient", action="store_true",
                          help="exit 0 even with rejected records")
    p_ingest.set_defaults(func=cmd_ingest)

    p_render = sub.add_parser("render", help="select, split, balance, and "
                                             "render events to PNGs")
    add_common(p_render)
    p_render.add_argument("--events", required=True)
    p_render.add_argument("--out", required=True, help="dataset directory")
    p_render.add_argument("--workers", type=int)
    p_render.add_argument("--dry-run", action="store_true",
                          help="write the manifest but no images")
    p_render.set_defaults(func=cmd_render)

    p_train = sub.add_parser("train-ffn", help="train the feedforward "
                                               "baseline on a dataset")
    add_common(p_train)
    p_train.add_argument("--events", required=True)
    p_train.add_argument("--data", required=True,
                         help="dataset directory with manifest.json")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.set_defaults(func=cmd_train_ffn)

    p_eval = sub.add_parser("evaluate", help="run a trained model on a "
                                             "split and emit metrics")
    add_common(p_eval)
    p_eval.add_argument("--events", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--split", default="test",
                        choices=("train", "val", "test"))
    p_eval.set_defaults(func=cmd_evaluate)

    p_report = sub.add_parser("report", help="metrics from a predictions "
                                             "CSV plus truth labels")
    add_common(p_report)
    p_report.add_argument("--predictions", required=True)
    p_report.add_argument("--events", required=True)
    p_report.add_argument("--out", required=True)
    p_report.add_argument("--signal-class", type=int, dest="signal_class")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CliDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
