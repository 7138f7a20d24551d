"""plateflow command line: synth, train-cascade, run, eval, ablate, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import cv2

from . import boost, synth
from .detect import DetectorConfig
from .eval import (
    OcrErrorModel,
    RunMetrics,
    ablation_report,
    collect_stream_run,
    load_annotations,
    score_run,
)
from .haar import GrayFrame, load_cascade, save_cascade
from .ocr import OcrEndpoint, load_ocr_manifest
from .pipeline import FrameSource, PipelineConfig, process_stream


@click.group()
def main():
    """Real-time low-resource license plate pipeline."""


@main.command("synth")
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(file_okay=False))
def synth_cmd(spec_file, out):
    """Generate a synthetic stream from a spec JSON file."""
    doc = json.loads(Path(spec_file).read_text(encoding="utf-8"))
    if "random" in doc:
        r = doc["random"]
        spec = synth.random_spec(
            stream_id=r.get("stream_id", Path(out).name),
            seed=int(r.get("seed", 0)),
            n_events=int(r.get("n_events", 3)),
            width=int(r.get("width", 480)),
            height=int(r.get("height", 480)),
        )
    else:
        spec = synth.spec_from_dict(doc)
    path = synth.generate_stream(spec, out)
    click.echo(f"wrote {spec.n_frames} frames to {path}")


def _load_patch_dir(path: Path, base_window) -> list[GrayFrame]:
    patches = []
    for p in sorted(path.iterdir()):
        if p.suffix.lower() not in (".png", ".pgm", ".jpg", ".jpeg"):
            continue
        img = cv2.imread(str(p), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise click.ClickException(f"unreadable patch {p}")
        if (img.shape[1], img.shape[0]) != base_window:
            img = cv2.resize(img, base_window, interpolation=cv2.INTER_AREA)
        patches.append(GrayFrame.from_array(img))
    if not patches:
        raise click.ClickException(f"no patches found in {path}")
    return patches


@main.command("train-cascade")
@click.argument("pos", required=False, type=click.Path(exists=True, file_okay=False))
@click.argument("neg", required=False, type=click.Path(exists=True, file_okay=False))
@click.option("--synth", "synth_spec", default=None, help='synthetic set, e.g. \'{"n_pos":500,"n_neg":2000,"seed":7}\'')
@click.option("-o", "--output", default="cascade.json", show_default=True)
@click.option("--max-stages", default=10, show_default=True)
@click.option("--max-stumps", default=50, show_default=True)
@click.option("--stage-tpr", default=0.995, show_default=True)
@click.option("--stage-fpr", default=0.5, show_default=True)
def train_cascade_cmd(pos, neg, synth_spec, output, max_stages, max_stumps, stage_tpr, stage_fpr):
    """Train the wake-up cascade from patch directories or a synthetic set."""
    base_window = boost.DEFAULT_BASE_WINDOW
    if synth_spec:
        doc = json.loads(Path(synth_spec).read_text()) if Path(synth_spec).is_file() else json.loads(synth_spec)
        positives, negatives = synth.make_training_set(
            int(doc.get("n_pos", 500)), int(doc.get("n_neg", 2000)), int(doc.get("seed", 0)), base_window
        )
    elif pos and neg:
        positives = _load_patch_dir(Path(pos), base_window)
        negatives = _load_patch_dir(Path(neg), base_window)
    else:
        raise click.UsageError("give POS and NEG patch directories, or --synth")
    targets = boost.StageTargets(
        min_stage_tpr=stage_tpr,
        max_stage_fpr=stage_fpr,
        max_stumps_per_stage=max_stumps,
        max_stages=max_stages,
    )
    model = boost.train_cascade(boost.TrainingSet(positives, negatives), targets, base_window)
    save_cascade(model, output)
    n_stumps = sum(len(s.stumps) for s in model.stages)
    click.echo(f"wrote {output}: {len(model.stages)} stages, {n_stumps} stumps")
    for w in model.warnings:
        click.echo(f"warning: {w}", err=True)


def _parse_backbone(backbone: str) -> DetectorConfig:
    if backbone == "oracle":
        return DetectorConfig(kind="oracle")
    if backbone.startswith("subprocess:"):
        return DetectorConfig(kind="subprocess", subprocess_cmd=backbone.split(":", 1)[1].split())
    raise click.BadParameter(f"backbone must be 'oracle' or 'subprocess:<cmd>', got {backbone!r}")


@main.command("run")
@click.argument("stream", type=click.Path(exists=True, file_okay=False))
@click.option("--cascade", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backbone", default="oracle", show_default=True)
@click.option("--no-wakeup", is_flag=True, help="ablation: disable the cascade gate")
@click.option("--gap", default=24, show_default=True)
@click.option("--best-k", default=3, show_default=True)
@click.option("-o", "--output", default="out", show_default=True)
def run_cmd(stream, cascade, backbone, no_wakeup, gap, best_k, output):
    """Process one stream and persist crops + instances.json."""
    det = _parse_backbone(backbone)
    annotations = None
    if det.kind == "oracle":
        ann_path = Path(stream) / "annotations.json"
        if not ann_path.is_file():
            raise click.ClickException("oracle backbone needs annotations.json next to the frames")
        annotations = load_annotations(ann_path)
    wakeup = None
    if cascade and not no_wakeup:
        wakeup = load_cascade(cascade)
    config = PipelineConfig(gap_frames=gap, best_k=best_k, wakeup_model=wakeup, backbone=det)
    result = process_stream(FrameSource(stream), config, annotations=annotations, out_dir=output)
    click.echo(
        f"{result.stream_id}: {len(result.instances)} instances, "
        f"{result.frames_processed} frames ({result.frames_gated_out} gated out), "
        f"{result.fps_measured:.1f} fps"
    )


def _stream_dirs(out_dir: Path) -> list[Path]:
    return sorted(p for p in out_dir.iterdir() if (p / "instances.json").is_file())


def _collect_runs(out_dir: Path, annotations_path: Path, ocr: str):
    """StreamRun list for every stream under an output directory."""
    error_model = OcrErrorModel()
    endpoint = None
    if ocr == "mock":
        mode = "mock"
    elif ocr.startswith("http:") or ocr.startswith("https:"):
        mode = "http"
        endpoint = OcrEndpoint(base_url=ocr)
    else:
        raise click.BadParameter(f"--ocr must be 'mock' or 'http(s)://...', got {ocr!r}")

    runs = []
    for stream_dir in _stream_dirs(out_dir):
        sid = stream_dir.name
        if annotations_path.is_file():
            ann_file = annotations_path
        else:
            ann_file = annotations_path / sid / "annotations.json"
            if not ann_file.is_file():
                raise click.ClickException(f"no annotations for stream {sid} under {annotations_path}")
        annotation = load_annotations(ann_file)
        manifest = None
        if mode == "mock":
            manifest_path = ann_file.parent / "ocr_manifest.json"
            if not manifest_path.is_file():
                raise click.ClickException(f"mock OCR needs {manifest_path}")
            manifest = load_ocr_manifest(manifest_path)
        runs.append(
            collect_stream_run(stream_dir, annotation, mode, manifest, error_model, endpoint)
        )
    if not runs:
        raise click.ClickException(f"no stream results under {out_dir}")
    return runs


@main.command("eval")
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("annotations", type=click.Path(exists=True))
@click.option("--ocr", default="mock", show_default=True, help="mock or http://host:port")
@click.option("--name", default="pipeline", show_default=True)
def eval_cmd(out_dir, annotations, ocr, name):
    """Score a pipeline run; writes report files under OUT_DIR/report/."""
    runs = _collect_runs(Path(out_dir), Path(annotations), ocr)
    metrics = score_run(runs, pipeline_name=name)
    table = ablation_report([metrics], Path(out_dir) / "report")
    click.echo(table)


@main.command("ablate")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
def ablate_cmd(config_file):
    """Run several pipeline variants over a corpus and emit the comparison table."""
    cfg = json.loads(Path(config_file).read_text(encoding="utf-8"))
    streams = [Path(s) for s in cfg["streams"]]
    out_root = Path(cfg.get("out_dir", "ablation-out"))
    ocr = cfg.get("ocr", "mock")
    all_metrics: list[RunMetrics] = []
    for variant in cfg["pipelines"]:
        name = variant["name"]
        det = _parse_backbone(variant.get("backbone", "oracle"))
        wakeup = None
        if variant.get("wakeup", True) and cfg.get("cascade"):
            wakeup = load_cascade(cfg["cascade"])
        pconfig = PipelineConfig(
            gap_frames=int(variant.get("gap_frames", 24)),
            best_k=int(variant.get("best_k", 3)),
            wakeup_model=wakeup,
            backbone=det,
        )
        variant_out = out_root / name.replace(" ", "_")
        for stream in streams:
            annotations = None
            if det.kind == "oracle":
                annotations = load_annotations(stream / "annotations.json")
            process_stream(FrameSource(stream), pconfig, annotations=annotations, out_dir=variant_out)
        runs = []
        for stream in streams:
            sid = FrameSource(stream).stream_id
            annotation = load_annotations(stream / "annotations.json")
            manifest = load_ocr_manifest(stream / "ocr_manifest.json") if ocr == "mock" else None
            endpoint = OcrEndpoint(base_url=ocr) if ocr != "mock" else None
            runs.append(
                collect_stream_run(
                    variant_out / sid,
                    annotation,
                    "mock" if ocr == "mock" else "http",
                    manifest,
                    OcrErrorModel(),
                    endpoint,
                )
            )
        all_metrics.append(score_run(runs, pipeline_name=name))
    table = ablation_report(all_metrics, out_root / "report")
    click.echo(table)


@main.command("serve")
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", default="plateflow-data", show_default=True, envvar="PLATEFLOW_DATA_DIR")
@click.option("--ocr-url", default=None, envvar="PLATEFLOW_OCR_URL")
def serve_cmd(port, host, data_dir, ocr_url):
    """Start the review HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir, ocr_url=ocr_url), host=host, port=port, log_level="warning")


@main.command("mock-ocr")
@click.option("--port", default=8099, show_default=True)
def mock_ocr_cmd(port):
    """Serve the bundled mock OCR (decodes synthetic plate crops)."""
    from .ocr import MockOcrServer

    with MockOcrServer(port=port) as server:
        click.echo(f"mock OCR listening on {server.url}")
        try:
            import threading

            threading.Event().wait()
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    sys.exit(main())
