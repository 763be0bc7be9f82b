"""Corpus featurization and run orchestration.

The flow per sample: get a caption (from the manifest or the provider),
embed image and caption, difference their unit directions for the global
distance; ground objects, embed each crop/phrase pair for the local
distances; average those and fuse.  featurize_corpus fans this out over a
thread pool with order-preserving aggregation, run_training/run_eval wrap
it with the classifier and metrics, and everything an expensive provider
computed is written back into an augmented manifest copy so later runs can
skip the calls.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import MlpHead, TrainConfig, forward, load_head, save_head, train
from .embedding_io import EmbeddingFileReader, write_embedding_file
from .errors import (
    AllSamplesFailed,
    DimensionMismatch,
    EmptyDataset,
    EmptyExport,
    FormatError,
    SampleError,
    SingleClassDataset,
)
from .manifest import EmbeddingRef, EmbeddingRefs, SampleRecord, load_manifest, save_manifest
from .metrics import MetricsReport, ScoredSample, report
from .providers.base import (
    ImageRef,
    Provider,
    ProviderConfig,
    ProviderKind,
    SyntheticParams,
    filter_indices,
)
from .representation import (
    Embedding,
    EmptyObjectPolicy,
    FusionConfig,
    FusionMode,
    Misalignment,
    average_local,
    combine,
    global_distance,
    local_distance,
)

DEFAULT_CROP_SIZE = 224


@dataclass(frozen=True)
class RepresentationRecord:
    """Per-sample misalignment vectors plus bookkeeping."""

    id: str
    label: int
    d_global: Misalignment
    d_local: Misalignment
    d_combined: Misalignment
    n_objects: int

    def __post_init__(self):
        dims = {self.d_global.values.shape[0], self.d_local.values.shape[0], self.d_combined.values.shape[0]}
        if len(dims) != 1:
            raise DimensionMismatch(f"representation vectors disagree on dim: {sorted(dims)}")
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")

    @property
    def dim(self) -> int:
        return self.d_combined.values.shape[0]


@dataclass(frozen=True)
class RunConfig:
    """Everything a featurize/train/eval run needs, serializable to JSON."""

    provider: ProviderConfig = field(default_factory=ProviderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    crop_size: int = DEFAULT_CROP_SIZE
    parallelism: int = 1

    def __post_init__(self):
        if self.crop_size < 1:
            raise ValueError("crop_size must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        p = self.provider
        sp = p.synthetic_params
        return {
            "provider": {
                "kind": p.kind.value,
                "embedding_dim": p.embedding_dim,
                "endpoint": p.endpoint,
                "artifact_root": None if p.artifact_root is None else str(p.artifact_root),
                "synthetic_params": {
                    "real_align_deg": sp.real_align_deg,
                    "fake_align_deg": sp.fake_align_deg,
                    "noise_deg": sp.noise_deg,
                    "objects_per_image": sp.objects_per_image,
                    "seed": sp.seed,
                    "global_real_align_deg": sp.global_real_align_deg,
                    "global_fake_align_deg": sp.global_fake_align_deg,
                    "local_real_align_deg": sp.local_real_align_deg,
                    "local_fake_align_deg": sp.local_fake_align_deg,
                },
                "min_confidence": p.min_confidence,
                "max_objects": p.max_objects,
                "timeout_s": p.timeout_s,
                "max_in_flight": p.max_in_flight,
            },
            "fusion": {
                "w1": self.fusion.w1,
                "w2": self.fusion.w2,
                "mode": self.fusion.mode.value,
                "empty_object_policy": self.fusion.empty_object_policy.value,
            },
            "train": {
                "epochs": self.train.epochs,
                "learning_rate": self.train.learning_rate,
                "weight_decay": self.train.weight_decay,
                "batch_size": self.train.batch_size,
                "hidden_dim": self.train.hidden_dim,
                "seed": self.train.seed,
                "betas": list(self.train.betas),
                "eps": self.train.eps,
            },
            "crop_size": self.crop_size,
            "parallelism": self.parallelism,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        prov = dict(obj.get("provider", {}))
        if isinstance(prov.get("kind"), str):
            prov["kind"] = ProviderKind(prov["kind"])
        if prov.get("artifact_root") is not None:
            prov["artifact_root"] = Path(prov["artifact_root"])
        if isinstance(prov.get("synthetic_params"), dict):
            prov["synthetic_params"] = SyntheticParams(**prov["synthetic_params"])
        fus = dict(obj.get("fusion", {}))
        if isinstance(fus.get("mode"), str):
            fus["mode"] = FusionMode(fus["mode"])
        if isinstance(fus.get("empty_object_policy"), str):
            fus["empty_object_policy"] = EmptyObjectPolicy(fus["empty_object_policy"])
        tr = dict(obj.get("train", {}))
        if "betas" in tr:
            tr["betas"] = tuple(tr["betas"])
        return cls(
            provider=ProviderConfig(**prov),
            fusion=FusionConfig(**fus),
            train=TrainConfig(**tr),
            crop_size=int(obj.get("crop_size", DEFAULT_CROP_SIZE)),
            parallelism=int(obj.get("parallelism", 1)),
        )

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class _ReaderCache:
    """Embedding-file readers shared across samples, opened once each."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._readers: dict[str, EmbeddingFileReader] = {}

    def row(self, ref: EmbeddingRef) -> np.ndarray:
        with self._lock:
            reader = self._readers.get(ref.file)
            if reader is None:
                reader = EmbeddingFileReader(self.root / ref.file)
                self._readers[ref.file] = reader
        return reader.row(ref.row)


def _featurize_full(
    sample: SampleRecord,
    provider: Provider,
    cfg: RunConfig,
    root: Path,
    readers: _ReaderCache,
) -> tuple[RepresentationRecord, SampleRecord]:
    """Featurize one sample; also returns the sample with any freshly
    computed caption/objects filled in (for the augmented manifest)."""
    refs = sample.embedding_refs
    image_path = root / sample.image
    image = ImageRef.from_path(image_path)

    # Caption is needed only when its embedding or the detections must be
    # computed; with full refs no provider call happens at all.
    caption = sample.caption
    caption_generated = False
    if caption is None and (refs is None or refs.caption_text is None or sample.objects is None):
        caption = provider.caption(image)
        caption_generated = True

    if refs is not None and refs.global_image is not None:
        image_emb = Embedding(readers.row(refs.global_image))
    else:
        image_emb = provider.embed_image(image)
    if refs is not None and refs.caption_text is not None:
        caption_emb = Embedding(readers.row(refs.caption_text))
    else:
        caption_emb = provider.embed_text(caption)
    d_global = global_distance(image_emb, caption_emb)

    if sample.objects is not None:
        detections = list(sample.objects)
        detections_generated = False
    else:
        detections = provider.detect_objects(image, caption)
        detections_generated = True
    kept = filter_indices(detections, cfg.provider.min_confidence, cfg.provider.max_objects)

    # Object refs are index-aligned with the manifest's object list, so they
    # only apply when the detections came from the manifest.
    use_refs = not detections_generated and refs is not None
    locals_ = []
    for idx in kept:
        det = detections[idx]
        if use_refs and idx < len(refs.object_images):
            crop_emb = Embedding(readers.row(refs.object_images[idx]))
        else:
            crop_emb = provider.embed_image(ImageRef.from_path(image_path, region=det.box))
        if use_refs and idx < len(refs.object_phrases):
            phrase_emb = Embedding(readers.row(refs.object_phrases[idx]))
        else:
            phrase_emb = provider.embed_text(det.phrase)
        locals_.append(local_distance(crop_emb, phrase_emb))
    d_local = average_local(locals_, policy=cfg.fusion.empty_object_policy, dim=d_global.values.shape[0])
    d_combined = combine(d_global, d_local, cfg.fusion)

    record = RepresentationRecord(
        id=sample.id,
        label=sample.label,
        d_global=d_global,
        d_local=d_local,
        d_combined=d_combined,
        n_objects=len(kept),
    )
    if caption_generated or detections_generated:
        augmented = replace(
            sample,
            caption=caption,
            objects=detections if detections_generated else sample.objects,
        )
    else:
        augmented = sample
    return record, augmented


def featurize(
    sample: SampleRecord,
    provider: Provider,
    cfg: RunConfig,
    root=".",
) -> RepresentationRecord:
    """Misalignment representation of one sample; image and embedding-ref
    paths resolve against root.  Failures are tagged with the sample id."""
    try:
        record, _ = _featurize_full(sample, provider, cfg, Path(root), _ReaderCache(Path(root)))
        return record
    except SampleError:
        raise
    except Exception as exc:
        raise SampleError(sample.id, exc) from exc


@dataclass(frozen=True)
class FeaturizeFailure:
    id: str
    error: str
    cause: Exception


@dataclass(frozen=True)
class FeaturizeResult:
    records: list[RepresentationRecord]
    failures: list[FeaturizeFailure]


def featurize_corpus(
    manifest_path,
    provider: Provider,
    cfg: RunConfig,
    strict: bool = False,
    augmented_out=None,
) -> FeaturizeResult:
    """Featurize every sample of a manifest, in manifest order.

    Failures become report entries (strict=False) or abort the run with the
    offending sample's id (strict=True).  When augmented_out is given, a
    manifest copy with computed captions/objects filled in is written there,
    with image and embedding paths rewritten to stay valid.
    """
    manifest_path = Path(manifest_path)
    samples = load_manifest(manifest_path)
    if not samples:
        raise EmptyDataset(f"manifest {manifest_path} has no samples")
    root = manifest_path.parent
    readers = _ReaderCache(root)

    def work(sample: SampleRecord):
        try:
            return (*_featurize_full(sample, provider, cfg, root, readers), None)
        except Exception as exc:
            wrapped = exc if isinstance(exc, SampleError) else SampleError(sample.id, exc)
            if strict:
                raise wrapped from exc
            return None, sample, wrapped

    if cfg.parallelism == 1:
        outcomes = [work(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(work, samples))

    records: list[RepresentationRecord] = []
    failures: list[FeaturizeFailure] = []
    augmented: list[SampleRecord] = []
    for record, aug_sample, error in outcomes:
        augmented.append(aug_sample)
        if error is None:
            records.append(record)
        else:
            failures.append(FeaturizeFailure(aug_sample.id, str(error), error))
    if not records:
        raise AllSamplesFailed(f"all {len(samples)} samples failed; first: {failures[0].error}")
    if augmented_out is not None:
        _write_augmented(augmented, root, Path(augmented_out))
    return FeaturizeResult(records=records, failures=failures)


def _rebase(path_str: str, src_root: Path, out_dir: Path) -> str:
    return os.path.relpath((src_root / path_str).resolve(), out_dir.resolve())


def _write_augmented(samples: list[SampleRecord], src_root: Path, out_path: Path) -> None:
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    rewritten = []
    for s in samples:
        refs = s.embedding_refs
        if refs is not None:
            def move(ref):
                return None if ref is None else EmbeddingRef(_rebase(ref.file, src_root, out_dir), ref.row)

            refs = EmbeddingRefs(
                global_image=move(refs.global_image),
                caption_text=move(refs.caption_text),
                object_images=[move(r) for r in refs.object_images],
                object_phrases=[move(r) for r in refs.object_phrases],
            )
        rewritten.append(replace(s, image=_rebase(s.image, src_root, out_dir), embedding_refs=refs))
    save_manifest(out_path, rewritten)


def write_representations(records: list[RepresentationRecord], path) -> Path:
    """Persist combined vectors as an embedding file plus a JSONL index
    (id, label, n_objects, row) next to it."""
    if not records:
        raise EmptyExport("no representations to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_file(path, np.stack([r.d_combined.values for r in records]))
    index_path = path.with_suffix(path.suffix + ".index.jsonl")
    with index_path.open("w", encoding="utf-8") as fh:
        for row, r in enumerate(records):
            fh.write(json.dumps({"id": r.id, "label": r.label, "n_objects": r.n_objects, "row": row}) + "\n")
    return path


def run_training(manifest_path, provider: Provider, cfg: RunConfig, out_dir, strict: bool = False) -> Path:
    """Featurize, train the head, and persist artifact + run metadata.

    Returns the model artifact path; out_dir also receives run.json and the
    augmented manifest copy.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = featurize_corpus(
        manifest_path, provider, cfg, strict=strict, augmented_out=out_dir / "manifest.augmented.jsonl"
    )
    labels = {r.label for r in result.records}
    if labels != {0, 1}:
        raise SingleClassDataset(f"training needs both labels, manifest has only {sorted(labels)}")
    dataset = [(r.d_combined, r.label) for r in result.records]
    epoch_losses: list[float] = []
    head = train(dataset, cfg.train, epoch_losses=epoch_losses)
    artifact = out_dir / "model.itmc"
    save_head(head, artifact)
    metadata = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.train.seed,
        "sample_count": len(result.records),
        "n_real": sum(1 for r in result.records if r.label == 0),
        "n_fake": sum(1 for r in result.records if r.label == 1),
        "n_failures": len(result.failures),
        "failures": [{"id": f.id, "error": f.error} for f in result.failures],
        "final_epoch_loss": epoch_losses[-1] if epoch_losses else None,
        "model": artifact.name,
    }
    (out_dir / "run.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return artifact


def run_eval(manifest_path, provider: Provider, model, cfg: RunConfig, out_dir, strict: bool = False) -> MetricsReport:
    """Featurize, score prob_fake per sample, and compute ACC@0.5 / AP.

    model may be an MlpHead or an artifact path.  Writes scores.csv and
    eval.json under out_dir for auditability.
    """
    head = model if isinstance(model, MlpHead) else load_head(model)
    if head.input_dim != cfg.provider.embedding_dim:
        raise DimensionMismatch(
            f"model expects {head.input_dim}-dim representations, provider produces {cfg.provider.embedding_dim}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = featurize_corpus(
        manifest_path, provider, cfg, strict=strict, augmented_out=out_dir / "manifest.augmented.jsonl"
    )
    scored = [
        ScoredSample(id=r.id, score=forward(head, r.d_combined).prob_fake, label=r.label)
        for r in result.records
    ]
    metrics = report(scored)
    with (out_dir / "scores.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "prob_fake"])
        for s in scored:
            writer.writerow([s.id, s.label, repr(s.score)])
    summary = {
        "acc": metrics.acc,
        "ap": metrics.ap,
        "n_real": metrics.n_real,
        "n_fake": metrics.n_fake,
        "n_failures": len(result.failures),
        "config_hash": cfg.config_hash(),
    }
    (out_dir / "eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return metrics


def export_representations(records: list[RepresentationRecord], path) -> Path:
    """Write combined vectors as CSV: id,label,n_objects,d_0..d_{dim-1}.

    Values are written with repr-level precision, so reading the file back
    reproduces them to well under 1e-12.
    """
    if not records:
        raise EmptyExport("no representations to export")
    dim = records[0].dim
    for r in records:
        if r.dim != dim:
            raise DimensionMismatch(f"record {r.id} has dim {r.dim}, expected {dim}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "n_objects"] + [f"d_{i}" for i in range(dim)])
        for r in records:
            writer.writerow([r.id, r.label, r.n_objects] + [repr(v) for v in r.d_combined.values.tolist()])
    return path


def load_representations_csv(path) -> list[tuple[str, int, int, np.ndarray]]:
    """Read an export_representations CSV back as (id, label, n_objects, vector)."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "label", "n_objects"]:
            raise FormatError(f"{path}: not a representations CSV")
        dim = len(header) - 3
        if dim < 1 or header[3:] != [f"d_{i}" for i in range(dim)]:
            raise FormatError(f"{path}: malformed vector columns")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3 + dim:
                raise FormatError(f"{path}:{line_no}: expected {3 + dim} columns, got {len(row)}")
            vec = np.array([float(v) for v in row[3:]], dtype=np.float64)
            rows.append((row[0], int(row[1]), int(row[2]), vec))
    return rows
