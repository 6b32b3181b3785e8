"""Train and evaluate a 50-layer residual network on event-image datasets.

Consumes the directory layout written by the colliderscope pipeline
(``<split>/<class_name>/<event_id>[_rN].png`` plus ``manifest.json``)
and emits the same interchange formats it uses: a per-epoch history CSV
(``epoch,train_loss,train_acc,val_loss,val_acc``) and a predictions
CSV (``event_id,pred,prob_0..``) that `colliderscope report` scores
without any transformation.
"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
from PIL import Image
from torch.utils.data import DataLoader, Dataset
from torchvision import transforms
from torchvision.models import resnet50

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# balancing clones are "<event_id>_r<N>.png"; strip to recover the id
_CLONE_SUFFIX = re.compile(r"_r\d+$")


class HarnessError(RuntimeError):
    pass


def event_id_from_stem(stem: str) -> str:
    return _CLONE_SUFFIX.sub("", stem)


@dataclass
class TrainRunConfig:
    """One training run.

    Augmentation defaults (applied to the train split only when the
    toggle is on): shear up to +-10 degrees, translation up to +-10%
    of each side, horizontal mirror with probability 0.5.  Blank areas
    exposed by the affine moves are filled white to match the canvas
    background.

    ``lr_step_epochs`` multiplies the learning rate by
    ``lr_step_factor`` every that many epochs (off by default).
    ``early_stop_train_acc`` stops training once an end-of-epoch clean
    inference pass over the train split reaches the given accuracy;
    history rows still carry the running training-pass metrics.
    """

    data_dir: str
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lr_step_epochs: Optional[int] = None
    lr_step_factor: float = 0.1
    input_size: int = 224
    shear: bool = True
    translate: bool = True
    mirror: bool = True
    pretrained: bool = False
    early_stop_train_acc: Optional[float] = None
    seed: int = 0
    num_workers: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise HarnessError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise HarnessError(f"batch_size must be >= 1, got "
                               f"{self.batch_size}")
        if self.lr_step_epochs is not None and self.lr_step_epochs < 1:
            raise HarnessError("lr_step_epochs must be >= 1")
        if self.lr_step_factor <= 0.0:
            raise HarnessError("lr_step_factor must be positive")
        if self.input_size < 32:
            raise HarnessError(f"input_size must be >= 32, got "
                               f"{self.input_size}")
        if self.num_workers < 0:
            raise HarnessError("num_workers must be >= 0")


def load_class_names(data_dir: Path) -> dict[int, str]:
    """Class id -> directory name map from the dataset manifest."""
    path = Path(data_dir) / "manifest.json"
    if not path.is_file():
        raise HarnessError(f"missing manifest.json in {data_dir}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    try:
        return {int(k): str(v) for k, v in manifest["class_names"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise HarnessError(f"{path}: bad class_names table: {exc}") from exc


def scan_split(data_dir: Path, split: str,
               class_names: dict[int, str]) -> list[tuple[Path, int]]:
    """All (image path, class id) pairs of one split, sorted.

    Raises HarnessError naming the missing split or class directory,
    or any class directory with no images.
    """
    split_dir = Path(data_dir) / split
    if not split_dir.is_dir():
        raise HarnessError(f"missing split directory '{split}' "
                           f"in {data_dir}")
    items: list[tuple[Path, int]] = []
    for class_id in sorted(class_names):
        name = class_names[class_id]
        class_dir = split_dir / name
        if not class_dir.is_dir():
            raise HarnessError(f"split '{split}' is missing class "
                               f"directory '{name}'")
        files = sorted(class_dir.glob("*.png"))
        if not files:
            raise HarnessError(f"split '{split}' has no images for "
                               f"class '{name}'")
        items.extend((path, class_id) for path in files)
    return items


def _eval_transform(input_size: int, normalize: bool) -> transforms.Compose:
    steps = [transforms.Resize((input_size, input_size)),
             transforms.ToTensor()]
    if normalize:
        steps.append(transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD))
    return transforms.Compose(steps)


def _train_transform(config: TrainRunConfig) -> transforms.Compose:
    steps: list = [transforms.Resize((config.input_size,
                                      config.input_size))]
    if config.mirror:
        steps.append(transforms.RandomHorizontalFlip(0.5))
    if config.shear or config.translate:
        steps.append(transforms.RandomAffine(
            degrees=0.0,
            translate=(0.1, 0.1) if config.translate else None,
            shear=10.0 if config.shear else None,
            fill=255))
    steps.append(transforms.ToTensor())
    if config.pretrained:
        steps.append(transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD))
    return transforms.Compose(steps)


class EventImageDataset(Dataset):
    def __init__(self, items: Sequence[tuple[Path, int]], transform):
        self.items = list(items)
        self.transform = transform

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int):
        path, label = self.items[index]
        with Image.open(path) as im:
            tensor = self.transform(im.convert("RGB"))
        return tensor, label


def build_model(n_classes: int, pretrained: bool = False,
                seed: int = 0) -> torch.nn.Module:
    """ResNet50 with a fresh n_classes head; init is seed-deterministic."""
    torch.manual_seed(seed)
    weights = None
    if pretrained:
        from torchvision.models import ResNet50_Weights
        weights = ResNet50_Weights.DEFAULT
    model = resnet50(weights=weights)
    model.fc = torch.nn.Linear(model.fc.in_features, n_classes)
    return model


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def history_to_csv(history: list[EpochRow]) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss:.10g},"
                     f"{row.train_acc:.10g},{row.val_loss:.10g},"
                     f"{row.val_acc:.10g}")
    return "\n".join(lines) + "\n"


def predictions_to_csv(rows: list[tuple[str, int, list[float]]],
                       n_classes: int) -> str:
    header = "event_id,pred," + ",".join(f"prob_{i}"
                                         for i in range(n_classes))
    lines = [header]
    for event_id, pred, probs in rows:
        probs_text = ",".join(f"{p:.10g}" for p in probs)
        lines.append(f"{event_id},{pred},{probs_text}")
    return "\n".join(lines) + "\n"


def _validation_pass(model: torch.nn.Module, loader: DataLoader,
                     loss_fn) -> tuple[float, float]:
    model.eval()
    total_loss = 0.0
    correct = 0
    count = 0
    with torch.no_grad():
        for x, y in loader:
            logits = model(x)
            total_loss += float(loss_fn(logits, y)) * len(y)
            correct += int((logits.argmax(dim=1) == y).sum())
            count += len(y)
    return total_loss / count, correct / count


@dataclass
class TrainResult:
    checkpoint_path: Path
    history: list[EpochRow]


def train_cnn(config: TrainRunConfig, out_dir) -> TrainResult:
    """Fine-tune on the train split, log val metrics per epoch.

    Writes ``checkpoint.pt`` and ``history.csv`` into ``out_dir``.
    With ``epochs=0`` the checkpoint holds the initialized weights and
    the history is empty.  A fixed seed with ``num_workers=0`` (the
    default) reproduces the history CSV bytes on the same hardware.
    """
    data_dir = Path(config.data_dir)
    class_names = load_class_names(data_dir)
    n_classes = max(class_names) + 1
    train_items = scan_split(data_dir, "train", class_names)
    val_items = scan_split(data_dir, "val", class_names)

    model = build_model(n_classes, config.pretrained, config.seed)
    # reseed after model construction so augmentation draws do not
    # depend on how many parameters the init consumed
    torch.manual_seed(config.seed + 1)
    train_loader = DataLoader(
        EventImageDataset(train_items, _train_transform(config)),
        batch_size=config.batch_size, shuffle=True,
        num_workers=config.num_workers,
        generator=torch.Generator().manual_seed(config.seed + 2))
    val_loader = DataLoader(
        EventImageDataset(val_items, _eval_transform(config.input_size,
                                                     config.pretrained)),
        batch_size=config.batch_size, shuffle=False,
        num_workers=config.num_workers)

    optimizer = torch.optim.Adam(model.parameters(),
                                 lr=config.learning_rate,
                                 weight_decay=config.weight_decay)
    scheduler = None
    if config.lr_step_epochs is not None:
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=config.lr_step_epochs,
            gamma=config.lr_step_factor)
    clean_train_loader = None
    if config.early_stop_train_acc is not None:
        clean_train_loader = DataLoader(
            EventImageDataset(train_items,
                              _eval_transform(config.input_size,
                                              config.pretrained)),
            batch_size=config.batch_size, shuffle=False,
            num_workers=config.num_workers)
    loss_fn = torch.nn.CrossEntropyLoss()
    history: list[EpochRow] = []
    for epoch in range(config.epochs):
        model.train()
        total_loss = 0.0
        correct = 0
        for x, y in train_loader:
            optimizer.zero_grad()
            logits = model(x)
            loss = loss_fn(logits, y)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(y)
            correct += int((logits.argmax(dim=1) == y).sum())
        if scheduler is not None:
            scheduler.step()
        val_loss, val_acc = _validation_pass(model, val_loader, loss_fn)
        row = EpochRow(epoch=epoch,
                       train_loss=total_loss / len(train_items),
                       train_acc=correct / len(train_items),
                       val_loss=val_loss, val_acc=val_acc)
        history.append(row)
        log.info("epoch %d: train_acc=%.4f val_acc=%.4f", epoch,
                 row.train_acc, row.val_acc)
        if clean_train_loader is not None:
            _, clean_acc = _validation_pass(model, clean_train_loader,
                                            loss_fn)
            log.info("epoch %d: clean train_acc=%.4f", epoch, clean_acc)
            if clean_acc >= config.early_stop_train_acc:
                break

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.pt"
    torch.save({
        "state_dict": model.state_dict(),
        "class_names": {str(k): v for k, v in class_names.items()},
        "n_classes": n_classes,
        "input_size": config.input_size,
        "normalize": config.pretrained,
    }, checkpoint_path)
    (out_dir / "history.csv").write_text(history_to_csv(history),
                                         encoding="utf-8")
    return TrainResult(checkpoint_path=checkpoint_path, history=history)


@dataclass
class EvalResult:
    predictions_path: Path
    rows: int
    skipped: int


def evaluate_cnn(checkpoint_path, split_dir, out_path,
                 batch_size: int = 64) -> EvalResult:
    """Score every image under one split directory.

    ``split_dir`` must contain one subdirectory per class named in the
    checkpoint.  Writes a predictions CSV to ``out_path``; unreadable
    images are skipped and counted, never fatal.
    """
    try:
        payload = torch.load(checkpoint_path, map_location="cpu",
                             weights_only=True)
    except (OSError, RuntimeError) as exc:
        raise HarnessError(f"cannot load checkpoint {checkpoint_path}: "
                           f"{exc}") from exc
    class_names = {int(k): v for k, v in payload["class_names"].items()}
    n_classes = int(payload["n_classes"])
    model = build_model(n_classes)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    transform = _eval_transform(int(payload["input_size"]),
                                bool(payload["normalize"]))

    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise HarnessError(f"missing split directory {split_dir}")
    items: list[Path] = []
    for class_id in sorted(class_names):
        name = class_names[class_id]
        class_dir = split_dir / name
        if not class_dir.is_dir():
            raise HarnessError(f"{split_dir} is missing class "
                               f"directory '{name}'")
        items.extend(sorted(class_dir.glob("*.png")))

    rows: list[tuple[str, int, list[float]]] = []
    skipped = 0
    with torch.no_grad():
        for start in range(0, len(items), batch_size):
            tensors = []
            ids = []
            for path in items[start:start + batch_size]:
                try:
                    with Image.open(path) as im:
                        tensor = transform(im.convert("RGB"))
                except OSError as exc:
                    skipped += 1
                    log.warning("skipping unreadable image %s: %s",
                                path, exc)
                    continue
                tensors.append(tensor)
                ids.append(event_id_from_stem(path.stem))
            if not tensors:
                continue
            probs = torch.softmax(model(torch.stack(tensors)), dim=1)
            preds = probs.argmax(dim=1)
            for i, event_id in enumerate(ids):
                rows.append((event_id, int(preds[i]),
                             [float(p) for p in probs[i]]))

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(predictions_to_csv(rows, n_classes),
                        encoding="utf-8")
    return EvalResult(predictions_path=out_path, rows=len(rows),
                      skipped=skipped)
