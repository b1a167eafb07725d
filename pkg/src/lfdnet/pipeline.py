"""Pipeline stages shared by the command line and the test suite.

Each stage reads the previous stage's manifest and writes its own, so any
stage can be rerun in isolation.  Renders are cached by mesh content hash;
everything else is deterministic in its seed.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import boost as boost_mod
from .checkpoint import load_checkpoint
from .errors import ConfigError, ManifestError, MissingArtifactError
from .manifest import (
    CorpusEntry,
    RenderEntry,
    file_sha256,
    read_corpus_manifest,
    read_render_manifest,
    write_corpus_manifest,
    write_render_manifest,
)
from .mesh import load_mesh, normalize
from .model import ArchSpec, build
from .render import VIEW_COUNT, RenderConfig, dodecahedron_rig, read_pgm, render_views, write_pgm
from .synth import write_corpus
from .training import (
    TrainConfig,
    ViewDataset,
    dump_probabilities,
    evaluate,
    load_probability_dump,
    majority_vote,
    render_report,
    stratified_split,
    train,
)

PROBS_TRAIN = "probs_train.csv"
PROBS_TEST = "probs_test.csv"
BOOST_MODEL = "boost.gbdt"


def run_gen(out_dir, families, per_class: int, seed: int, log=None):
    """Generate the corpus and its manifest; byte-identical per (args, seed)."""
    counts = {name: per_class for name in families}
    rows = write_corpus(out_dir, counts, seed)
    entries = [CorpusEntry(path, label) for path, label in rows]
    write_corpus_manifest(out_dir, entries)
    if log is not None:
        log(f"generated {len(entries)} models across {len(counts)} families")
    return entries


def _image_names(model_path: str):
    stem = model_path.rsplit(".", 1)[0]
    return tuple(f"{stem}_v{v:02d}.pgm" for v in range(VIEW_COUNT))


def run_render(corpus_dir, out_dir, config: RenderConfig, jobs: int = 1, log=None):
    """Render 20 silhouette views per corpus model.

    Models whose mesh hash, render settings, and image files all match the
    existing manifest are skipped.  Returns (entries, failures); failures
    are (path, message) pairs for unreadable meshes, which are left out of
    the written manifest.
    """
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    entries = read_corpus_manifest(corpus_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        previous = {e.path: e for e in read_render_manifest(out_dir)}
    except (MissingArtifactError, ManifestError):
        previous = {}
    rig = dodecahedron_rig()

    def render_one(entry):
        mesh_path = corpus_dir / entry.path
        if not mesh_path.exists():
            raise MissingArtifactError(f"mesh not found: {mesh_path}")
        sha = file_sha256(mesh_path)
        prev = previous.get(entry.path)
        if (
            prev is not None
            and prev.mesh_sha256 == sha
            and prev.resolution == config.resolution
            and prev.fill == config.fill_fraction
            and all((out_dir / img).exists() for img in prev.images)
        ):
            return prev.with_split(entry.split or prev.split), True
        mesh = normalize(load_mesh(mesh_path))
        views = render_views(mesh, rig, config)
        images = _image_names(entry.path)
        (out_dir / images[0]).parent.mkdir(parents=True, exist_ok=True)
        for img, view in zip(images, views):
            write_pgm(view, out_dir / img)
        made = RenderEntry(
            entry.path,
            entry.label,
            entry.split,
            sha,
            config.resolution,
            config.fill_fraction,
            images,
        )
        return made, False

    results = [None] * len(entries)
    failures = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = {i: pool.submit(render_one, e) for i, e in enumerate(entries)}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except Exception as exc:
                failures.append((entries[i].path, str(exc)))
                if log is not None:
                    log(f"render failed for {entries[i].path}: {exc}")
    done = [r for r in results if r is not None]
    rendered = sum(1 for _, cached in done if not cached)
    write_render_manifest(out_dir, [e for e, _ in done])
    if log is not None:
        log(f"rendered {rendered} models, reused {len(done) - rendered}, failed {len(failures)}")
    return [e for e, _ in done], failures


def run_split(images_dir, train_fraction: float, seed: int, log=None):
    """Assign stratified train/test tags and rewrite the render manifest."""
    images_dir = Path(images_dir)
    entries = read_render_manifest(images_dir)
    class_names = sorted({e.label for e in entries})
    labels = np.array([class_names.index(e.label) for e in entries])
    is_train = stratified_split(labels, train_fraction, seed)
    tagged = [e.with_split("train" if t else "test") for e, t in zip(entries, is_train)]
    write_render_manifest(images_dir, tagged)
    if log is not None:
        log(f"split {int(is_train.sum())} train / {int((~is_train).sum())} test models")
    return tagged


def load_view_dataset(images_dir, which=None, class_names=None, jobs: int = 1) -> ViewDataset:
    """Load rendered views as a dataset; `which` filters by split tag."""
    images_dir = Path(images_dir)
    entries = read_render_manifest(images_dir)
    if class_names is None:
        class_names = sorted({e.label for e in entries})
    else:
        class_names = list(class_names)
        unknown = {e.label for e in entries} - set(class_names)
        if unknown:
            raise ManifestError(f"labels not in the class list: {', '.join(sorted(unknown))}")
    if which is not None:
        if which not in ("train", "test"):
            raise ValueError(f"split filter must be train or test, got {which!r}")
        if all(e.split == "" for e in entries):
            raise ManifestError("no split tags in the manifest; run the split stage first")
        entries = [e for e in entries if e.split == which]
    if not entries:
        raise ManifestError(f"no models selected from {images_dir}")
    resolutions = {e.resolution for e in entries}
    if len(resolutions) != 1:
        raise ManifestError(f"mixed render resolutions {sorted(resolutions)}")
    size = resolutions.pop()

    n = len(entries) * VIEW_COUNT
    images = np.empty((n, size, size), dtype=np.uint8)

    def load_model(mi):
        entry = entries[mi]
        for v, img in enumerate(entry.images):
            view = read_pgm(images_dir / img)
            if view.width != size or view.height != size:
                raise ManifestError(f"{img}: size {view.width}x{view.height}, expected {size}")
            images[mi * VIEW_COUNT + v] = view.pixels

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(load_model, range(len(entries))))
    else:
        for mi in range(len(entries)):
            load_model(mi)

    labels = np.repeat([class_names.index(e.label) for e in entries], VIEW_COUNT)
    return ViewDataset(
        images=images,
        labels=labels.astype(np.int64),
        model_ids=np.repeat(np.arange(len(entries), dtype=np.int64), VIEW_COUNT),
        view_ids=np.tile(np.arange(VIEW_COUNT, dtype=np.int64), len(entries)),
        model_paths=[e.path for e in entries],
        class_names=class_names,
    )


def resolve_arch(overrides: dict, resolution: int, n_classes: int) -> ArchSpec:
    """ArchSpec from overrides, defaulting geometry to the dataset's."""
    overrides = dict(overrides)
    overrides.setdefault("input_size", resolution)
    overrides.setdefault("classes", n_classes)
    try:
        arch = ArchSpec(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid architecture: {exc}") from exc
    if arch.input_size != resolution:
        raise ConfigError(
            f"architecture input size {arch.input_size} != render resolution {resolution}"
        )
    if arch.classes != n_classes:
        raise ConfigError(f"architecture classes {arch.classes} != dataset classes {n_classes}")
    return arch


def run_train(images_dir, out_dir, arch_overrides: dict, cfg: TrainConfig, jobs: int = 1, log=None):
    """Train on the rendered train split; checkpoints land in out_dir."""
    train_ds = load_view_dataset(images_dir, "train", jobs=jobs)
    test_ds = load_view_dataset(images_dir, "test", class_names=train_ds.class_names, jobs=jobs)
    sample = read_render_manifest(images_dir)[0]
    arch = resolve_arch(arch_overrides, sample.resolution, len(train_ds.class_names))
    net = build(arch, seed=cfg.seed)
    extra = {"render_resolution": sample.resolution, "render_fill": sample.fill}
    history = train(net, train_ds, test_ds, cfg, out_dir=out_dir, log=log, extra=extra)
    return net, history


def run_eval(images_dir, checkpoint_path, out_dir, jobs: int = 1, log=None):
    """Evaluate a checkpoint; write probability dumps and the test report.

    Returns {"train": EvalResult, "test": EvalResult}.
    """
    checkpoint_path = Path(checkpoint_path)
    if not checkpoint_path.exists():
        raise MissingArtifactError(f"checkpoint not found: {checkpoint_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, meta = load_checkpoint(checkpoint_path)
    class_names = meta.class_labels or None
    results = {}
    for which, dump_name in (("train", PROBS_TRAIN), ("test", PROBS_TEST)):
        ds = load_view_dataset(images_dir, which, class_names=class_names, jobs=jobs)
        result = evaluate(net, ds)
        dump_probabilities(out_dir / dump_name, ds, result.probs)
        results[which] = result
        if log is not None:
            log(
                f"{which}: image accuracy {result.image_accuracy:.4f}, "
                f"model accuracy {result.model_accuracy:.4f}"
            )
    report = render_report(results["test"])
    (out_dir / "report.txt").write_text(report + "\n")
    summary = {
        which: {
            "image_accuracy": res.image_accuracy,
            "model_accuracy": res.model_accuracy,
            "per_class_image_recall": {
                res.class_names[c]: r for c, r in res.per_class_image_recall.items()
            },
        }
        for which, res in results.items()
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return results


def _model_groups(models, views):
    """Group dump rows by model path, preserving first-seen order."""
    groups = {}
    for i, (model, view) in enumerate(zip(models, views)):
        groups.setdefault(model, []).append(i)
    for model, rows in groups.items():
        if len(rows) != VIEW_COUNT:
            raise ManifestError(f"{model}: expected {VIEW_COUNT} views, got {len(rows)}")
    return groups


def _dump_accuracy(models, views, probs, labels, model=None):
    """(majority-vote accuracy, boosted accuracy) over a probability dump."""
    groups = _model_groups(models, views)
    raw_hits = 0
    boosted_hits = 0
    for rows in groups.values():
        rows = np.asarray(rows)
        label = int(labels[rows[0]])
        p = probs[rows].astype(np.float64)
        raw_hits += int(majority_vote(p.argmax(axis=1), p) == label)
        if model is not None:
            feats = boost_mod.build_view_features(p, views[rows])
            boosted_hits += int(model.predict_model(feats) == label)
    n = len(groups)
    raw = raw_hits / n
    return raw, (boosted_hits / n if model is not None else None)


def run_boost(eval_dir, out_dir, cfg, log=None):
    """Fit boosted trees on the train-split dump; report both accuracies."""
    eval_dir, out_dir = Path(eval_dir), Path(out_dir)
    train_dump = eval_dir / PROBS_TRAIN
    if not train_dump.exists():
        raise MissingArtifactError(f"probability dump not found: {train_dump}")
    out_dir.mkdir(parents=True, exist_ok=True)
    models, views, probs, labels = load_probability_dump(train_dump)
    features = boost_mod.build_view_features(probs.astype(np.float64), views)
    booster = boost_mod.fit(features, labels, probs.shape[1], cfg)
    boost_mod.save_model(booster, out_dir / BOOST_MODEL)

    summary = {}
    raw, boosted = _dump_accuracy(models, views, probs, labels, booster)
    summary["train"] = {"majority_vote": raw, "boosted": boosted}
    test_dump = eval_dir / PROBS_TEST
    if test_dump.exists():
        t_models, t_views, t_probs, t_labels = load_probability_dump(test_dump)
        raw_t, boosted_t = _dump_accuracy(t_models, t_views, t_probs, t_labels, booster)
        summary["test"] = {"majority_vote": raw_t, "boosted": boosted_t}

    lines = []
    for which, accs in summary.items():
        lines.append(
            f"{which}: majority vote {accs['majority_vote']:.4f}, "
            f"boosted {accs['boosted']:.4f}"
        )
    (out_dir / "boost_report.txt").write_text("\n".join(lines) + "\n")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    if log is not None:
        for line in lines:
            log(line)
    return summary


@dataclass
class PredictResult:
    class_names: list
    mean_probs: np.ndarray
    top3: list  # (name, probability) pairs, best first
    vote_label: str
    boosted_label: str | None


def run_predict(checkpoint_path, mesh_path, boost_path=None) -> PredictResult:
    """Classify one mesh file end to end with a trained checkpoint."""
    checkpoint_path = Path(checkpoint_path)
    mesh_path = Path(mesh_path)
    if not checkpoint_path.exists():
        raise MissingArtifactError(f"checkpoint not found: {checkpoint_path}")
    if not mesh_path.exists():
        raise MissingArtifactError(f"mesh not found: {mesh_path}")
    net, meta = load_checkpoint(checkpoint_path)
    fill = float(meta.extra.get("render_fill", 0.9))
    config = RenderConfig(resolution=net.spec.input_size, fill_fraction=fill)
    mesh = normalize(load_mesh(mesh_path))
    views = render_views(mesh, dodecahedron_rig(), config)
    x = np.stack([v.pixels for v in views]).astype(np.float32)
    x *= np.float32(1.0 / 255.0)
    probs = net.forward_probs(x[:, None, :, :]).astype(np.float64)

    names = meta.class_labels or [str(i) for i in range(net.spec.classes)]
    mean_probs = probs.mean(axis=0)
    order = np.argsort(-mean_probs, kind="stable")[:3]
    top3 = [(names[int(i)], float(mean_probs[int(i)])) for i in order]
    vote = majority_vote(probs.argmax(axis=1), probs)

    boosted_label = None
    if boost_path is not None:
        boost_path = Path(boost_path)
        if not boost_path.exists():
            raise MissingArtifactError(f"boost model not found: {boost_path}")
        booster = boost_mod.load_model(boost_path)
        feats = boost_mod.build_view_features(probs, np.arange(VIEW_COUNT))
        boosted_label = names[booster.predict_model(feats)]
    return PredictResult(
        class_names=names,
        mean_probs=mean_probs,
        top3=top3,
        vote_label=names[vote],
        boosted_label=boosted_label,
    )
