"""Dataset split, training loop, evaluation, and probability dumps."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointMeta, save_checkpoint
from .errors import TrainingDivergedError
from .layers import compute_class_weights, reweight_probs, softmax, weighted_softmax_xent
from .model import Network
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 20
    lr: float = 0.001
    seed: int = 0
    class_weighting: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0) -> np.ndarray:
    """Per-class train/test split at the model level.

    Each class contributes round-half-up(train_fraction * n) models to the
    training set, clamped so at least one model per class lands in the test
    set.  Returns a boolean array (True = train).  Deterministic for a given
    seed; classes are processed in sorted label order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must be in (0, 1)")
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) == 0:
        raise ValueError("labels must be a non-empty 1-D sequence")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    is_train = np.zeros(len(labels), dtype=bool)
    for label in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == label)
        n = len(idx)
        if n < 2:
            raise ValueError(f"class {label!r} has {n} model(s); need at least 2")
        n_train = int(math.floor(train_fraction * n + 0.5))
        n_train = min(n_train, n - 1)
        n_train = max(n_train, 1)
        picked = rng.permutation(n)[:n_train]
        is_train[idx[picked]] = True
    return is_train


@dataclass
class ViewDataset:
    """Per-view silhouette samples grouped by source model."""

    images: np.ndarray  # uint8 [N, S, S]
    labels: np.ndarray  # int64 [N], class index per view
    model_ids: np.ndarray  # int64 [N], index into model_paths
    view_ids: np.ndarray  # int64 [N], camera index 0..19
    model_paths: list
    class_names: list

    def __len__(self) -> int:
        return len(self.images)

    def batch_inputs(self, idx) -> np.ndarray:
        x = self.images[idx].astype(np.float32)
        x *= np.float32(1.0 / 255.0)
        return x[:, None, :, :]


def _epoch_batches(perm: np.ndarray, batch_size: int):
    n = len(perm)
    full = n - n % batch_size
    for start in range(0, full, batch_size):
        yield perm[start : start + batch_size]
    if n - full >= 2:
        yield perm[full:]


def train(
    net: Network,
    train_ds: ViewDataset,
    test_ds: ViewDataset,
    cfg: TrainConfig,
    out_dir=None,
    log=None,
    extra=None,
):
    """Train with Adam on class-weighted softmax cross entropy.

    Per epoch: shuffles views, runs forward/backward/update over batches,
    then records train loss plus test loss/accuracy.  Writes a rolling
    checkpoint and a metrics.csv row per epoch when ``out_dir`` is given;
    ``extra`` rides along in the checkpoint metadata.  Returns the history
    list.
    """
    extra = dict(extra) if extra else {}
    classes = net.spec.classes
    if cfg.class_weighting:
        weights = compute_class_weights(train_ds.labels, classes)
    else:
        weights = np.ones(classes, dtype=np.float64)
    unit_weights = np.ones(classes, dtype=np.float64)
    adam = Adam(net.named_params(), lr=cfg.lr)
    root = np.random.SeedSequence(cfg.seed)
    shuffle_ss, dropout_ss = root.spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    dropout_rng = np.random.Generator(np.random.PCG64(dropout_ss))

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.csv", "w", newline="")
        metrics_fh.write("epoch,train_loss,test_loss,test_accuracy\n")

    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = shuffle_rng.permutation(len(train_ds))
            losses = []
            for batch_idx in _epoch_batches(perm, cfg.batch_size):
                x = train_ds.batch_inputs(batch_idx)
                y = train_ds.labels[batch_idx]
                logits = net.forward(x, train=True, rng=dropout_rng)
                loss, dlogits = weighted_softmax_xent(logits, y, weights)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"training loss became {loss} in epoch {epoch}"
                    )
                net.backward(dlogits)
                adam.step(net.named_grads())
                losses.append(loss)
            train_loss = sum(losses) / len(losses) if losses else float("nan")

            test_loss_sum = 0.0
            test_correct = 0
            for start in range(0, len(test_ds), 64):
                idx = np.arange(start, min(start + 64, len(test_ds)))
                logits = net.forward(test_ds.batch_inputs(idx), train=False)
                y = test_ds.labels[idx]
                loss, _ = weighted_softmax_xent(logits, y, unit_weights)
                test_loss_sum += loss * len(idx)
                test_correct += int((logits.argmax(axis=1) == y).sum())
            test_loss = test_loss_sum / len(test_ds)
            test_acc = test_correct / len(test_ds)

            row = {
                "epoch": epoch,
                "train_loss": train_loss,
                "test_loss": test_loss,
                "test_accuracy": test_acc,
            }
            history.append(row)
            if log is not None:
                log(
                    f"epoch {epoch}/{cfg.epochs}: train_loss={train_loss:.4f} "
                    f"test_loss={test_loss:.4f} test_acc={test_acc:.4f}"
                )
            if out_dir is not None:
                metrics_fh.write(
                    f"{epoch},{train_loss!r},{test_loss!r},{test_acc!r}\n"
                )
                metrics_fh.flush()
                meta = CheckpointMeta(
                    epoch=epoch,
                    history=history,
                    class_labels=list(train_ds.class_names),
                    adam={
                        "t": adam.t,
                        "lr": adam.lr,
                        "beta1": adam.beta1,
                        "beta2": adam.beta2,
                        "eps": adam.eps,
                        "m": adam.m,
                        "v": adam.v,
                    },
                    extra=extra,
                )
                save_checkpoint(out_dir / "checkpoint_last.lfdn", net, meta)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_dir is not None:
        meta = CheckpointMeta(
            epoch=cfg.epochs,
            history=history,
            class_labels=list(train_ds.class_names),
            adam=None,
            extra=extra,
        )
        save_checkpoint(out_dir / "checkpoint_final.lfdn", net, meta)
    return history


def predict_probs(
    net: Network, ds: ViewDataset, batch_size: int = 64, class_weights=None
) -> np.ndarray:
    """Inference-mode class probabilities for every view in the dataset.

    ``class_weights`` optionally reweights the predicted distributions
    (see ``reweight_probs``) instead of, or on top of, loss weighting.
    """
    out = np.empty((len(ds), net.spec.classes), dtype=np.float32)
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        out[idx] = net.forward_probs(ds.batch_inputs(idx))
    if class_weights is not None:
        out = reweight_probs(out, class_weights)
    return out


def majority_vote(view_preds: np.ndarray, view_probs: np.ndarray) -> int:
    """Majority vote over per-view argmax labels.

    Ties are broken by the highest total probability over the views among
    the tied classes, then by the lowest class index.
    """
    counts = np.bincount(view_preds, minlength=view_probs.shape[1])
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if len(tied) == 1:
        return int(tied[0])
    scores = view_probs[:, tied].sum(axis=0)
    return int(tied[int(np.argmax(scores))])


@dataclass
class EvalResult:
    class_names: list
    probs: np.ndarray  # [N, K] per view
    view_preds: np.ndarray  # [N]
    image_accuracy: float
    model_paths: list
    model_labels: np.ndarray  # [M]
    model_preds: np.ndarray  # [M]
    model_accuracy: float
    confusion: np.ndarray  # [K, K] model-level, rows = true class
    per_class_image_recall: dict = field(default_factory=dict)


def evaluate(net: Network, ds: ViewDataset, probs: np.ndarray | None = None) -> EvalResult:
    """Per-view accuracy plus model-level majority voting and confusion."""
    if probs is None:
        probs = predict_probs(net, ds)
    view_preds = probs.argmax(axis=1)
    image_acc = float((view_preds == ds.labels).mean())

    k = probs.shape[1]
    model_index = sorted(set(ds.model_ids.tolist()))
    model_labels = np.empty(len(model_index), dtype=np.int64)
    model_preds = np.empty(len(model_index), dtype=np.int64)
    confusion = np.zeros((k, k), dtype=np.int64)
    paths = []
    for mi, mid in enumerate(model_index):
        rows = np.flatnonzero(ds.model_ids == mid)
        label = int(ds.labels[rows[0]])
        pred = majority_vote(view_preds[rows], probs[rows])
        model_labels[mi] = label
        model_preds[mi] = pred
        confusion[label, pred] += 1
        paths.append(ds.model_paths[mid])
    model_acc = float((model_preds == model_labels).mean())

    recalls = {}
    for c in range(k):
        mask = ds.labels == c
        if mask.any():
            recalls[c] = float((view_preds[mask] == c).mean())
    return EvalResult(
        class_names=list(ds.class_names),
        probs=probs,
        view_preds=view_preds,
        image_accuracy=image_acc,
        model_paths=paths,
        model_labels=model_labels,
        model_preds=model_preds,
        model_accuracy=model_acc,
        confusion=confusion,
        per_class_image_recall=recalls,
    )


def render_report(result: EvalResult) -> str:
    """Plain-text per-class misclassification table (model level)."""
    lines = []
    names = result.class_names
    width = max([len(n) for n in names] + [len("remaining classes")])
    lines.append(f"{'class':<{width}}  models  wrong  confused with")
    total = len(result.model_labels)
    wrong_total = 0
    clean_models = 0
    clean_classes = 0
    for c in np.unique(result.model_labels):
        rows = result.model_labels == c
        n = int(rows.sum())
        wrong = int((result.model_preds[rows] != c).sum())
        if wrong == 0:
            clean_models += n
            clean_classes += 1
            continue
        wrong_total += wrong
        targets = result.model_preds[rows]
        targets = targets[targets != c]
        counts = {}
        for t in targets.tolist():
            counts[t] = counts.get(t, 0) + 1
        confused = ", ".join(
            f"{names[t]}({counts[t]})"
            for t in sorted(counts, key=lambda t: (-counts[t], t))
        )
        lines.append(f"{names[c]:<{width}}  {n:>6}  {wrong:>5}  {confused}")
    lines.append(
        f"{'remaining classes':<{width}}  {clean_models:>6}  {0:>5}  "
        f"({clean_classes} classes without errors)"
    )
    lines.append(
        f"{'total':<{width}}  {total:>6}  {wrong_total:>5}  "
        f"accuracy {100.0 * result.model_accuracy:.2f}%"
    )
    return "\n".join(lines)


def dump_probabilities(path, ds: ViewDataset, probs: np.ndarray) -> None:
    """Write the per-view probability dump CSV.

    Columns: model path, view index, one probability column per class
    (shortest round-trip float32 formatting), then the true label index.
    """
    k = probs.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("model,view," + ",".join(f"p{c:02d}" for c in range(k)) + ",label\n")
        for i in range(len(ds)):
            cells = [str(ds.model_paths[ds.model_ids[i]]), str(int(ds.view_ids[i]))]
            cells.extend(str(p) for p in probs[i])
            cells.append(str(int(ds.labels[i])))
            fh.write(",".join(cells) + "\n")


def load_probability_dump(path):
    """Read a probability dump; returns (model_paths, view_ids, probs, labels)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["model", "view"] or header[-1] != "label":
            raise ValueError(f"unrecognized probability dump header in {path}")
        k = len(header) - 3
        models = []
        views = []
        probs = []
        labels = []
        for row in reader:
            models.append(row[0])
            views.append(int(row[1]))
            probs.append([np.float32(v) for v in row[2 : 2 + k]])
            labels.append(int(row[2 + k]))
    return (
        models,
        np.array(views, dtype=np.int64),
        np.array(probs, dtype=np.float32),
        np.array(labels, dtype=np.int64),
    )
