"""Command line interface.

Exit codes: 0 on success, 1 for configuration or input-file problems, 2 for
runtime failures (backend unreachable, dialogue produced no usable answer).
"""

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .backends import HttpChatBackend, MockBackend, load_mock_script
from .detection import NmsConfig, load_detections, perception_tokens
from .dialogue import Transcript, resolve_prediction, run_dialogue
from .errors import (
    DialogueFailed,
    EmptyDataset,
    InvalidConfig,
    MalformedRecord,
    MalformedScript,
    OptdialogError,
)
from .evaluation import IMAGE_ID_RE, load_manifest, run_evaluation
from .labels import LabelSpace
from .prompting import template_version
from .settings import AblationSetting, DecodingConfig, RunConfig

log = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "setting",
    "rounds",
    "temperature",
    "max_new_tokens",
    "score_threshold",
    "iou_threshold",
    "max_detections",
    "retry_limit",
    "parallelism",
    "detector_image_size",
    "classes",
    "backend",
    "model",
    "resize_longest_side",
    "timeout",
    # present in resolved_config.json echoes; accepted so a previous run's
    # resolved config can be replayed as-is
    "template_version",
    "package_version",
}

ABLATION_COLUMNS = ("setting", "acc_standard", "acc_jaccard", "macro_recall", "macro_f1")


def parse_config(path) -> dict:
    """Load a YAML or JSON config file and reject unknown keys."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    try:
        if str(path).endswith(".json"):
            doc = json.loads(text)
        else:
            doc = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InvalidConfig(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise InvalidConfig(f"config {path} must be a mapping at the top level")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    return doc


def build_run_config(
    doc: dict,
    setting: str | None = None,
    rounds: int | None = None,
    parallelism: int | None = None,
) -> RunConfig:
    """Merge config file values with command line overrides."""
    setting_value = setting if setting is not None else doc.get("setting", "d")
    try:
        resolved_setting = AblationSetting(str(setting_value).lower())
    except ValueError:
        raise InvalidConfig(
            f"setting must be one of a, b, c, d, got {setting_value!r}"
        ) from None
    size = doc.get("detector_image_size", (640, 640))
    if isinstance(size, int):
        size = (size, size)
    elif isinstance(size, (list, tuple)) and len(size) == 2:
        size = (int(size[0]), int(size[1]))
    else:
        raise InvalidConfig(
            f"detector_image_size must be an integer or a [width, height] pair, "
            f"got {size!r}"
        )
    try:
        nms = NmsConfig(
            score_threshold=float(doc.get("score_threshold", 0.5)),
            iou_threshold=float(doc.get("iou_threshold", 0.5)),
            max_detections=int(doc.get("max_detections", 20)),
        )
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc
    decoding = DecodingConfig(
        temperature=float(doc.get("temperature", 0.2)),
        max_new_tokens=int(doc.get("max_new_tokens", 512)),
    )
    return RunConfig(
        setting=resolved_setting,
        rounds=rounds if rounds is not None else doc.get("rounds"),
        decoding=decoding,
        nms=nms,
        retry_limit=int(doc.get("retry_limit", 2)),
        parallelism=(
            parallelism if parallelism is not None else int(doc.get("parallelism", 1))
        ),
        detector_image_size=size,
    )


def resolve_backend(spec: str | None, doc: dict):
    spec = spec if spec is not None else doc.get("backend")
    if not spec:
        raise InvalidConfig(
            "no backend specified; pass --backend <url> or --backend mock:<script>"
        )
    if spec.startswith("mock:"):
        return MockBackend(load_mock_script(spec[len("mock:"):]))
    if spec.startswith("http://") or spec.startswith("https://"):
        resize = doc.get("resize_longest_side", 640)
        return HttpChatBackend(
            base_url=spec,
            model=str(doc.get("model", "default")),
            timeout=float(doc.get("timeout", 120)),
            resize_longest_side=None if resize is None else int(resize),
        )
    raise InvalidConfig(
        f"backend {spec!r} must be an http(s) URL or mock:<script path>"
    )


def config_classes(doc: dict) -> LabelSpace | None:
    classes = doc.get("classes")
    if classes is None:
        return None
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise InvalidConfig("classes must be a list of strings")
    try:
        return LabelSpace(tuple(classes))
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc


def write_resolved_config(out_dir, cfg: RunConfig, backend_spec, labels) -> None:
    doc = {
        "setting": cfg.setting.value,
        "rounds": cfg.rounds,
        "temperature": cfg.decoding.temperature,
        "max_new_tokens": cfg.decoding.max_new_tokens,
        "score_threshold": cfg.nms.score_threshold,
        "iou_threshold": cfg.nms.iou_threshold,
        "max_detections": cfg.nms.max_detections,
        "retry_limit": cfg.retry_limit,
        "parallelism": cfg.parallelism,
        "detector_image_size": list(cfg.detector_image_size),
        "backend": backend_spec,
        "classes": list(labels.classes) if labels is not None else None,
        "template_version": template_version(),
        "package_version": __version__,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(body):
    """Run a command body, mapping exceptions to the exit code contract."""
    try:
        body()
    except (InvalidConfig, MalformedRecord, MalformedScript, EmptyDataset) as exc:
        _fail(1, str(exc))
    except OptdialogError as exc:
        _fail(2, str(exc))
    except OSError as exc:
        _fail(2, str(exc))


@click.group()
@click.version_option(__version__, prog_name="optdialog")
def main():
    """Food image classification through staged agent dialogues."""
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML or JSON config file.")
@click.option("--image", "image_path", type=click.Path(), required=True,
              help="Image to classify.")
@click.option("--image-id", default=None,
              help="Identifier for the image (default: file stem).")
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Manifest supplying the class vocabulary.")
@click.option("--detections", "detections_path", type=click.Path(), default=None,
              help="Detections JSONL file.")
@click.option("--backend", "backend_spec", default=None,
              help="Chat endpoint URL or mock:<script>.")
@click.option("--setting", type=click.Choice(["a", "b", "c", "d"]), default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for the transcript and resolved config.")
def run(config_path, image_path, image_id, manifest_path, detections_path,
        backend_spec, setting, rounds, out_dir):
    """Classify one image and print the predicted label."""

    def body():
        doc = parse_config(config_path)
        cfg = build_run_config(doc, setting=setting, rounds=rounds)
        labels = config_classes(doc)
        if labels is None and manifest_path is not None:
            labels = load_manifest(manifest_path).labels
        if labels is None:
            raise InvalidConfig(
                "no class vocabulary; set classes in the config or pass --manifest"
            )
        resolved_id = image_id if image_id else Path(image_path).stem
        if not IMAGE_ID_RE.match(resolved_id):
            raise InvalidConfig(
                f"image id {resolved_id!r} must match [A-Za-z0-9._-]+"
            )
        detections = (
            load_detections(detections_path) if detections_path is not None else {}
        )
        backend = resolve_backend(backend_spec, doc)
        width, height = cfg.detector_image_size
        tokens = perception_tokens(
            detections.get(resolved_id, []), cfg.nms, width, height,
            image_id=resolved_id,
        )
        from .backends import ImageAttachment

        image = ImageAttachment.from_file(image_path)
        prediction, transcript = run_dialogue(
            resolved_id, image, tokens, labels, cfg, backend
        )
        if out_dir is not None:
            out = Path(out_dir)
            (out / "transcripts").mkdir(parents=True, exist_ok=True)
            ref = f"transcripts/{resolved_id}.transcript.json"
            with open(out / ref, "w", encoding="utf-8") as fh:
                fh.write(transcript.to_json())
            write_resolved_config(out, cfg, backend_spec or doc.get("backend"), labels)
        if prediction.label_index is None:
            raise DialogueFailed(
                f"no usable answer for {resolved_id}; every turn failed to parse"
            )
        name = labels.name_of(prediction.label_index)
        click.echo(f"{resolved_id}: {name} [{prediction.source.value}]")

    _guarded(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--detections", "detections_path", type=click.Path(), default=None)
@click.option("--backend", "backend_spec", default=None)
@click.option("--setting", type=click.Choice(["a", "b", "c", "d"]), default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--parallelism", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def evaluate(config_path, manifest_path, detections_path, backend_spec,
             setting, rounds, parallelism, out_dir):
    """Run the dialogue on every manifest image and score the predictions."""

    def body():
        doc = parse_config(config_path)
        cfg = build_run_config(
            doc, setting=setting, rounds=rounds, parallelism=parallelism
        )
        manifest = load_manifest(manifest_path, labels=config_classes(doc))
        detections = (
            load_detections(detections_path) if detections_path is not None else {}
        )
        backend = resolve_backend(backend_spec, doc)
        write_resolved_config(
            out_dir, cfg, backend_spec or doc.get("backend"), manifest.labels
        )
        report = run_evaluation(manifest, detections, cfg, backend, out_dir)
        click.echo(
            f"setting {report.setting}: n={report.n_evaluated} "
            f"acc_standard={report.acc_standard:.4f} "
            f"acc_jaccard={report.acc_jaccard:.4f} "
            f"macro_recall={report.macro_recall:.4f} "
            f"macro_f1={report.macro_f1:.4f} "
            f"abstentions={report.abstentions}"
        )

    _guarded(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--detections", "detections_path", type=click.Path(), default=None)
@click.option("--backend", "backend_spec", default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--parallelism", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def ablate(config_path, manifest_path, detections_path, backend_spec,
           rounds, parallelism, out_dir):
    """Evaluate all four settings and tabulate the results.

    A setting that fails keeps an empty row in ablation.csv; the command
    then exits with status 2 after the remaining settings have run.
    """

    def body():
        doc = parse_config(config_path)
        base_cfg = build_run_config(
            doc, setting="d", rounds=rounds, parallelism=parallelism
        )
        manifest = load_manifest(manifest_path, labels=config_classes(doc))
        detections = (
            load_detections(detections_path) if detections_path is not None else {}
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        failures = []
        for setting in AblationSetting:
            cfg = base_cfg.for_setting(setting)
            sub_dir = out / f"setting_{setting.value}"
            try:
                backend = resolve_backend(backend_spec, doc)
                write_resolved_config(
                    sub_dir, cfg, backend_spec or doc.get("backend"), manifest.labels
                )
                report = run_evaluation(manifest, detections, cfg, backend, sub_dir)
            except (InvalidConfig, OptdialogError, OSError) as exc:
                log.error("setting %s failed: %s", setting.value, exc)
                failures.append(setting.value)
                rows.append((setting.value, "", "", "", ""))
                continue
            rows.append(
                (
                    setting.value,
                    f"{report.acc_standard:.6f}",
                    f"{report.acc_jaccard:.6f}",
                    f"{report.macro_recall:.6f}",
                    f"{report.macro_f1:.6f}",
                )
            )
            click.echo(
                f"setting {setting.value}: acc_standard={report.acc_standard:.4f} "
                f"acc_jaccard={report.acc_jaccard:.4f}"
            )
        import csv as _csv

        with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(ABLATION_COLUMNS)
            writer.writerows(rows)
        if failures:
            raise DialogueFailed(
                f"settings failed: {', '.join(failures)} (see ablation.csv)"
            )

    _guarded(body)


@main.command()
@click.option("--transcript", "transcript_path", type=click.Path(), required=True)
def inspect(transcript_path):
    """Pretty-print a stored dialogue transcript."""

    def body():
        try:
            text = Path(transcript_path).read_text(encoding="utf-8")
            transcript = Transcript.from_json(text)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise MalformedRecord(str(transcript_path), 0, str(exc)) from exc
        click.echo(
            f"image {transcript.image_id}: {len(transcript.turns)} turns, "
            f"{transcript.final_round} round(s)"
        )
        for turn in transcript.turns:
            head = f"  round {turn.round} {turn.role.display_name}"
            if turn.hypothesis is not None:
                verdict = (
                    f" [{turn.hypothesis.verdict.value}]"
                    if turn.hypothesis.verdict
                    else ""
                )
                retries = (
                    f" (retries={turn.retries_used})" if turn.retries_used else ""
                )
                click.echo(
                    f"{head}: {turn.hypothesis.raw_label_text}{verdict}"
                    f"{retries} -- {turn.hypothesis.rationale}"
                )
            else:
                kind = (turn.parse_error or {}).get("type", "unknown error")
                click.echo(f"{head}: FAILED ({kind}, retries={turn.retries_used})")
        label_index, source = resolve_prediction(transcript)
        if label_index is None:
            click.echo("final: abstained")
        else:
            click.echo(f"final: class index {label_index} via {source.value}")

    _guarded(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
@click.option("--detections", "detections_path", type=click.Path(), default=None)
@click.option("--backend", "backend_spec", default=None,
              help="Only mock:<script> backends are checked.")
def validate(config_path, manifest_path, detections_path, backend_spec):
    """Check input files without running any dialogue."""

    def body():
        if not any([config_path, manifest_path, detections_path, backend_spec]):
            raise InvalidConfig("nothing to validate; pass at least one input")
        if config_path is not None:
            doc = parse_config(config_path)
            build_run_config(doc)
            config_classes(doc)
            click.echo(f"config {config_path}: OK")
        if manifest_path is not None:
            manifest = load_manifest(manifest_path)
            missing = [
                e.image_id
                for e in manifest.entries
                if not Path(e.image_path).is_file()
            ]
            click.echo(
                f"manifest {manifest_path}: OK "
                f"({len(manifest)} images, {len(manifest.labels)} classes)"
            )
            if missing:
                click.echo(
                    f"warning: {len(missing)} image file(s) not found: "
                    f"{', '.join(missing[:5])}"
                    + ("..." if len(missing) > 5 else "")
                )
        if detections_path is not None:
            detections = load_detections(detections_path)
            total = sum(len(v) for v in detections.values())
            click.echo(
                f"detections {detections_path}: OK "
                f"({len(detections)} images, {total} boxes)"
            )
        if backend_spec is not None and backend_spec.startswith("mock:"):
            script = load_mock_script(backend_spec[len("mock:"):])
            click.echo(
                f"mock script: OK ({len(script.entries)} scripted entries)"
            )

    _guarded(body)


if __name__ == "__main__":
    main()
