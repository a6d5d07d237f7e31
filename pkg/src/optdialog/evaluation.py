"""Dataset evaluation: run the dialogue over a manifest and score it.

The manifest is a CSV with columns image_id, image_path, label. Detections
come from a JSONL sidecar keyed by image_id; images without an entry simply
run with an empty token set. Per-image failures never abort the run, they
become abstentions.
"""

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .backends import ChatBackend, ImageAttachment
from .detection import RawDetection, perception_tokens
from .dialogue import Prediction, PredictionSource, Transcript, run_dialogue
from .errors import EmptyDataset, MalformedRecord, OptdialogError
from .labels import LabelSpace
from .metrics import MetricsReport, confusion_counts, emit_reports, macro_metrics
from .settings import RunConfig

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("image_id", "image_path", "label")

IMAGE_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    label: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    labels: LabelSpace

    def __len__(self) -> int:
        return len(self.entries)

    def truth_indices(self) -> dict:
        out = {}
        for entry in self.entries:
            index = self.labels.exact_index(entry.label)
            if index is None:
                raise MalformedRecord(
                    "<manifest>", 0, f"label {entry.label!r} is not in the label space"
                )
            out[entry.image_id] = index
        return out


def load_manifest(path, labels: LabelSpace | None = None) -> DatasetManifest:
    """Parse and validate the dataset CSV.

    With labels=None the label space is built from the sorted set of labels
    seen in the file; otherwise every label must already be in the space.
    """
    path = str(path)
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise MalformedRecord(path, 0, f"cannot read manifest: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedRecord(path, 1, "manifest is empty")
        if tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise MalformedRecord(
                path,
                1,
                f"header must be {','.join(MANIFEST_COLUMNS)}, "
                f"got {','.join(reader.fieldnames)}",
            )
        entries = []
        seen_ids = set()
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(value is None for value in row.values()):
                raise MalformedRecord(path, lineno, "wrong number of columns")
            image_id = row["image_id"].strip()
            image_path = row["image_path"].strip()
            label = row["label"].strip()
            if not image_id or not IMAGE_ID_RE.match(image_id):
                raise MalformedRecord(
                    path,
                    lineno,
                    f"image_id {image_id!r} must match [A-Za-z0-9._-]+",
                )
            if image_id in seen_ids:
                raise MalformedRecord(path, lineno, f"duplicate image_id {image_id!r}")
            seen_ids.add(image_id)
            if not image_path:
                raise MalformedRecord(path, lineno, "image_path must not be empty")
            if not label:
                raise MalformedRecord(path, lineno, "label must not be empty")
            if labels is not None and labels.exact_index(label) is None:
                raise MalformedRecord(
                    path, lineno, f"label {label!r} is not in the label space"
                )
            entries.append(
                ManifestEntry(image_id=image_id, image_path=image_path, label=label)
            )
    if not entries:
        raise EmptyDataset(f"{path}: manifest has no rows")
    if labels is None:
        labels = LabelSpace.from_names(entry.label for entry in entries)
    return DatasetManifest(entries=tuple(entries), labels=labels)


def _evaluate_one(
    entry: ManifestEntry,
    detections: dict,
    labels: LabelSpace,
    cfg: RunConfig,
    backend: ChatBackend,
) -> tuple:
    """Run one image end to end; any failure becomes an abstention."""
    try:
        raw: list[RawDetection] = detections.get(entry.image_id, [])
        width, height = cfg.detector_image_size
        tokens = perception_tokens(
            raw, cfg.nms, width, height, image_id=entry.image_id
        )
        image = ImageAttachment.from_file(entry.image_path)
        return run_dialogue(entry.image_id, image, tokens, labels, cfg, backend)
    except (OptdialogError, OSError) as exc:
        log.warning("image %s failed (%s), recording an abstention",
                    entry.image_id, exc)
        prediction = Prediction(
            image_id=entry.image_id,
            label_index=None,
            source=PredictionSource.ABSTAIN,
        )
        transcript = Transcript(image_id=entry.image_id, turns=(), final_round=0)
        return prediction, transcript


def run_evaluation(
    manifest: DatasetManifest,
    detections: dict,
    cfg: RunConfig,
    backend: ChatBackend,
    out_dir,
) -> MetricsReport:
    """Evaluate every manifest image and write all artifacts under out_dir.

    Dialogues run on a worker pool of cfg.parallelism threads; results keep
    manifest order regardless of completion order, and all file writes stay
    on the calling thread.
    """
    out = Path(out_dir)
    transcripts_dir = out / "transcripts"
    transcripts_dir.mkdir(parents=True, exist_ok=True)

    labels = manifest.labels

    def job(entry: ManifestEntry) -> tuple:
        return _evaluate_one(entry, detections, labels, cfg, backend)

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        results = list(pool.map(job, manifest.entries))

    predictions = []
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for prediction, transcript in results:
            ref = f"transcripts/{prediction.image_id}.transcript.json"
            with open(out / ref, "w", encoding="utf-8") as tf:
                tf.write(transcript.to_json())
            record = {
                "image_id": prediction.image_id,
                "label": (
                    labels.name_of(prediction.label_index)
                    if prediction.label_index is not None
                    else None
                ),
                "source": prediction.source.value,
                "transcript_path": ref,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            predictions.append(
                Prediction(
                    image_id=prediction.image_id,
                    label_index=prediction.label_index,
                    source=prediction.source,
                    transcript_ref=ref,
                )
            )

    counts = confusion_counts(predictions, manifest.truth_indices(), labels)
    report = macro_metrics(counts, setting=cfg.setting.value)
    emit_reports(report, out)
    return report
