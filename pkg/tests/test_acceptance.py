"""End-to-end acceptance checks for the pipeline.

Every test prints one [PASS]/[FAIL] summary line before asserting, so
running ``pytest tests/test_acceptance.py -v -s`` doubles as a release
checklist.  Each check pins a contract the rest of the suite relies on:
mass arithmetic, rasterization, committed golden images, labeling,
balancing, splitting, gradients, desk-scale trainability, and bytewise
reproducibility of the full command-line pipeline.
"""

import io
import json
import time
from pathlib import Path

import numpy as np
from PIL import Image

from colliderscope import ffn
from colliderscope.cli import main as cli_main
from colliderscope.dataset import (
    DatasetManifest,
    ManifestEntry,
    balance_by_replication,
    split,
)
from colliderscope.ingest import parse_events
from colliderscope.kinematics import Event, invariant_mass_transverse
from colliderscope.metrics import confusion, signal_background_efficiency
from colliderscope.render import (
    CanvasSpec,
    SizeVariable,
    blank_canvas,
    decode_png,
    encode_png,
    rasterize_circle,
    render_event,
)
from colliderscope.selection import DEFAULT_MASS_WINDOWS, classify_dimuon
from colliderscope.synth import (
    GeneratorSpec,
    generate_complex_events,
    generate_dimuon_events,
)

GOLDEN_DIR = Path(__file__).parent / "golden"


def _verdict(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f": {detail}"
    print(line)
    assert ok, line


def test_transverse_mass_matches_four_vector_oracle():
    # 1e5 random massless pairs, pT in (0, 1000], |eta| <= 5; the
    # closed-form pair mass must agree with extended-precision
    # four-vector sums to 1e-9 relative, in under a second.
    rng = np.random.default_rng(20260823)
    n = 100_000
    pt = 1000.0 * (1.0 - rng.random((n, 2)))
    eta = rng.uniform(-5.0, 5.0, (n, 2))
    phi = rng.uniform(-np.pi, np.pi, (n, 2))

    start = time.perf_counter()
    got = invariant_mass_transverse(pt[:, 0], eta[:, 0], phi[:, 0],
                                    pt[:, 1], eta[:, 1], phi[:, 1])
    elapsed = time.perf_counter() - start

    ld = np.longdouble
    px = pt.astype(ld) * np.cos(phi.astype(ld))
    py = pt.astype(ld) * np.sin(phi.astype(ld))
    pz = pt.astype(ld) * np.sinh(eta.astype(ld))
    e = pt.astype(ld) * np.cosh(eta.astype(ld))
    m2 = (e.sum(axis=1) ** 2 - px.sum(axis=1) ** 2
          - py.sum(axis=1) ** 2 - pz.sum(axis=1) ** 2)
    want = np.sqrt(np.maximum(m2, ld(0.0)))

    rel = np.abs(got.astype(ld) - want) / want
    worst = float(rel.max())
    _verdict("pair mass closed form vs four-vector oracle",
             worst < 1e-9 and elapsed < 1.0,
             f"n={n} max_rel_err={worst:.3e} elapsed={elapsed:.3f}s")


def test_circle_rasterizer_matches_distance_scan():
    # 100 random circles (radius 1..60, centers allowed slightly off
    # canvas): the painted outline must equal a full-canvas per-pixel
    # rounded-distance scan, exactly, in under five seconds.
    spec = CanvasSpec()
    rng = np.random.default_rng(7)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    color = (10, 20, 30)
    bad = []
    start = time.perf_counter()
    for k in range(100):
        radius = int(rng.integers(1, 61))
        cx = int(rng.integers(-20, spec.width + 20))
        cy = int(rng.integers(-20, spec.height + 20))
        canvas = blank_canvas(spec)
        rasterize_circle(canvas, (cx, cy), radius, color)
        painted = (canvas != np.array(spec.background,
                                      dtype=np.uint8)).any(axis=2)
        dist = np.sqrt((xx - cx) ** 2.0 + (yy - cy) ** 2.0)
        want = np.rint(dist).astype(np.int64) == radius
        if not np.array_equal(painted, want):
            bad.append((cx, cy, radius))
    elapsed = time.perf_counter() - start
    _verdict("circle outlines vs per-pixel distance scan",
             not bad and elapsed < 5.0,
             f"circles=100 mismatches={bad} elapsed={elapsed:.3f}s")


def test_golden_images_byte_identical():
    # The five committed fixtures must re-render to byte-identical PNG
    # files, and both the bundled decoder and Pillow must read those
    # bytes back to the rendered pixels.
    with open(GOLDEN_DIR / "golden_events.ndjson", "rb") as fh:
        events = list(parse_events(fh))
    assert len(events) == 5
    energy = CanvasSpec(size_variable=SizeVariable.ENERGY)
    pt = CanvasSpec(size_variable=SizeVariable.TRANSVERSE_MOMENTUM)
    mismatches = []
    for ev in events:
        spec = energy if "dimuon" in ev.id else pt
        image = render_event(ev, spec)
        png = encode_png(image)
        if png != (GOLDEN_DIR / f"{ev.id}.png").read_bytes():
            mismatches.append(ev.id)
            continue
        assert np.array_equal(decode_png(png), image)
        with Image.open(io.BytesIO(png)) as im:
            assert np.array_equal(np.asarray(im.convert("RGB")), image)
    _verdict("golden fixtures re-render byte-identical",
             not mismatches, f"events=5 mismatches={mismatches}")


def test_dimuon_labeler_matches_brute_force():
    # Window lookup vs an independent linear scan over all windows, on
    # 1e5 random masses, plus three pinned anchor masses.
    rng = np.random.default_rng(99)
    masses = rng.uniform(0.0, 120.0, 100_000)
    brute = np.zeros(len(masses), dtype=np.int64)
    for window in DEFAULT_MASS_WINDOWS:
        inside = (masses >= window.lo) & (masses <= window.hi)
        brute[inside] = window.class_id
    got = np.array([classify_dimuon(float(m)) for m in masses])
    agree = int((got == brute).sum())
    anchors = (classify_dimuon(3.01), classify_dimuon(95.76),
               classify_dimuon(15.52))
    _verdict("mass-window labeler vs brute-force scan",
             agree == len(masses) and anchors == (1, 4, 0),
             f"agree={agree}/{len(masses)} "
             f"anchors(3.01, 95.76, 15.52)={anchors}")


def test_train_balancing_replay():
    # Reference scenario: train counts {30809, 21709, 20950} topped up
    # to {30809, 30000, 30000} by replication, keeping every original
    # entry and staying deterministic.
    counts = {0: 30809, 1: 21709, 2: 20950}
    manifest = DatasetManifest(ratios=(0.8, 0.1, 0.1), seed=3,
                               class_names={0: "a", 1: "b", 2: "c"})
    for class_id, n in counts.items():
        name = manifest.class_names[class_id]
        for i in range(n):
            eid = f"{name}{i:05d}"
            manifest.splits["train"].append(ManifestEntry(
                event_id=eid, class_id=class_id,
                image_path=f"train/{name}/{eid}.png"))
    targets = {1: 30_000, 2: 30_000}
    balanced = balance_by_replication(manifest, targets)
    got = balanced.counts("train")
    originals = sum(1 for e in balanced.splits["train"]
                    if e.replication_index == 0)
    source_ids = {e.event_id for e in manifest.splits["train"]}
    clones_ok = all(e.event_id in source_ids and e.replication_index == 1
                    for e in balanced.splits["train"]
                    if e.replication_index > 0)
    replay = balance_by_replication(manifest, targets)
    ok = (got == {0: 30_809, 1: 30_000, 2: 30_000}
          and originals == sum(counts.values())
          and clones_ok
          and replay.to_dict() == balanced.to_dict())
    _verdict("train balancing replay", ok, f"counts={got}")


def test_split_fractions_disjoint_deterministic():
    # 1e4 labeled events, 4 classes: per-class split counts within 1 of
    # the exact ratio, splits disjoint and covering, assignment a pure
    # function of the seed.
    events = [Event(id=f"ev-{i:05d}", objects=(), truth_class=i % 4)
              for i in range(10_000)]
    ratios = (0.8, 0.1, 0.1)
    manifest = split(events, ratios, seed=5)
    worst = 0.0
    for class_id in range(4):
        for name, ratio in zip(("train", "val", "test"), ratios):
            got = manifest.counts(name).get(class_id, 0)
            worst = max(worst, abs(got - ratio * 2500))
    ids = {name: {e.event_id for e in manifest.splits[name]}
           for name in ("train", "val", "test")}
    disjoint = (not (ids["train"] & ids["val"])
                and not (ids["train"] & ids["test"])
                and not (ids["val"] & ids["test"]))
    covered = len(ids["train"] | ids["val"] | ids["test"]) == len(events)
    same_seed = split(events, ratios, seed=5).to_dict() == manifest.to_dict()
    new_seed = split(events, ratios, seed=6).to_dict() != manifest.to_dict()
    _verdict("stratified split fractions, disjointness, determinism",
             worst <= 1.0 and disjoint and covered and same_seed and new_seed,
             f"max_count_dev={worst:.0f} disjoint={disjoint} "
             f"covered={covered}")


def test_gradient_check():
    # Central differences (h=1e-5) through the full forward pass agree
    # with backprop to 1e-4 on every parameter of a small net, with a
    # non-trivial standardization in the model, in under a second.
    config = ffn.MlpConfig(input_dim=4, n_classes=3, hidden_layers=2,
                           hidden_units=5, dropout_rate=0.0, seed=7)
    model = ffn.init_model(config)
    rng = np.random.default_rng(11)
    model.feature_mean = rng.normal(0.0, 2.0, 4)
    model.feature_std = rng.uniform(0.5, 3.0, 4)
    x = rng.normal(size=(8, 4))
    y = rng.integers(0, 3, size=8)

    start = time.perf_counter()
    _, cache = ffn.forward(model, x, mode="train")
    grads = ffn.backward(model, cache, y)
    h = 1e-5
    worst = 0.0
    for analytic, params in ((grads.d_weights, model.weights),
                             (grads.d_biases, model.biases)):
        for a, arr in zip(analytic, params):
            numeric = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                plus = ffn.loss_softmax_xent(ffn.forward(model, x)[0], y)
                arr[idx] = orig - h
                minus = ffn.loss_softmax_xent(ffn.forward(model, x)[0], y)
                arr[idx] = orig
                numeric[idx] = (plus - minus) / (2.0 * h)
                it.iternext()
            denom = np.maximum(np.abs(a) + np.abs(numeric), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    elapsed = time.perf_counter() - start
    _verdict("finite-difference gradient check",
             worst < 1e-4 and elapsed < 1.0,
             f"max_rel_err={worst:.3e} elapsed={elapsed:.3f}s")


def _split_features(events, spec, seed):
    manifest = split(events, (0.8, 0.1, 0.1), seed=seed)
    by_id = {ev.id: ev for ev in events}

    def part(name):
        entries = manifest.splits[name]
        x = ffn.featurize_events([by_id[e.event_id] for e in entries], spec)
        y = np.array([e.class_id for e in entries])
        return x, y

    return part("train"), part("val"), part("test")


def test_desk_scale_learnability():
    # Two-muon task: 5 classes x 2000 events, >= 99% validation
    # accuracy within 50 epochs in under two minutes.  Multi-object
    # task: 3 classes x 3000 events, signal-vs-background efficiency on
    # the held-out test split >= 0.90.
    events = generate_dimuon_events(GeneratorSpec(seed=42), 2000)
    spec = ffn.FeatureSpec(mode="dimuon")
    (train_x, train_y), (val_x, val_y), _ = _split_features(events, spec, 42)
    config = ffn.MlpConfig(input_dim=spec.input_dim, n_classes=5,
                           hidden_layers=2, hidden_units=64,
                           dropout_rate=0.0, batch_size=64, epochs=50,
                           seed=44, early_stop_val_acc=0.99)
    start = time.perf_counter()
    _, history = ffn.train(train_x, train_y, val_x, val_y, config)
    elapsed = time.perf_counter() - start
    val_acc = history[-1].val_acc
    dimuon_ok = val_acc >= 0.99 and len(history) <= 50 and elapsed < 120.0

    cevents = generate_complex_events(GeneratorSpec(seed=42), 3000)
    cspec = ffn.FeatureSpec(mode="complex", max_jets=6)
    (ctrain_x, ctrain_y), (cval_x, cval_y), (ctest_x, ctest_y) = \
        _split_features(cevents, cspec, 42)
    cconfig = ffn.MlpConfig(input_dim=cspec.input_dim, n_classes=3,
                            hidden_layers=2, hidden_units=64,
                            dropout_rate=0.0, batch_size=64, epochs=30,
                            seed=44)
    cmodel, _ = ffn.train(ctrain_x, ctrain_y, cval_x, cval_y, cconfig)
    preds, _ = ffn.predict(cmodel, ctest_x)
    eff = signal_background_efficiency(confusion(preds, ctest_y, 3), 0)
    _verdict("desk-scale learnability",
             dimuon_ok and eff >= 0.90,
             f"dimuon val_acc={val_acc:.4f} epochs={len(history)} "
             f"time={elapsed:.1f}s; complex test efficiency={eff:.4f}")


_PIPELINE_CONFIG = {
    "seed": 11,
    "mode": "dimuon",
    "per_class": 12,
    "ratios": [0.7, 0.15, 0.15],
    "balance": {"0": 10},
    "model": {"hidden_layers": 1, "hidden_units": 16, "epochs": 3,
              "dropout_rate": 0.5, "batch_size": 16},
}


def _run_pipeline(root: Path, workers: int) -> None:
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(_PIPELINE_CONFIG), encoding="utf-8")
    events = root / "events.ndjson"
    steps = [
        ["synth", "--config", str(cfg), "--out", str(events)],
        ["render", "--config", str(cfg), "--events", str(events),
         "--out", str(root / "data"), "--workers", str(workers)],
        ["train-ffn", "--config", str(cfg), "--events", str(events),
         "--data", str(root / "data"), "--out", str(root / "run")],
        ["evaluate", "--config", str(cfg), "--events", str(events),
         "--data", str(root / "data"),
         "--model", str(root / "run" / "model.bin"),
         "--out", str(root / "eval")],
        ["report", "--config", str(cfg),
         "--predictions", str(root / "eval" / "predictions.csv"),
         "--events", str(events), "--out", str(root / "report")],
    ]
    for argv in steps:
        assert cli_main(argv) == 0, argv


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_byte_determinism(tmp_path, capsys):
    # Full synth -> render -> train -> evaluate -> report runs with the
    # same config must leave byte-identical trees, for a repeated run
    # and for a different render worker count.
    _run_pipeline(tmp_path / "a", workers=1)
    _run_pipeline(tmp_path / "a2", workers=1)
    _run_pipeline(tmp_path / "b", workers=2)
    tree_a = _tree_bytes(tmp_path / "a")
    tree_a2 = _tree_bytes(tmp_path / "a2")
    tree_b = _tree_bytes(tmp_path / "b")
    capsys.readouterr()

    def diff(lhs, rhs):
        if set(lhs) != set(rhs):
            return sorted(set(lhs) ^ set(rhs))
        return [name for name in lhs if lhs[name] != rhs[name]]

    rerun_diff = diff(tree_a, tree_a2)
    # The resolved-config record echoes the requested worker count, so
    # it is the one file allowed to differ between worker counts.
    worker_diff = [name for name in diff(tree_a, tree_b)
                   if Path(name).name != "config.resolved.json"]
    _verdict("pipeline byte determinism",
             not rerun_diff and not worker_diff,
             f"files={len(tree_a)} rerun_diff={rerun_diff[:5]} "
             f"worker_diff={worker_diff[:5]}")
