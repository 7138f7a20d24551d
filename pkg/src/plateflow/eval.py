"""Measurement harness: Levenshtein-alignment OCR P/R/F1, detection rate,
average precision, FPS aggregation and ablation-table emission."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .geometry import BoundingBox, Detection, iou
from .ocr import OcrErrorModel, OcrResult, mock_recognize, normalize_bangla

DETECTED_IOU = 0.5


@dataclass(frozen=True)
class EditCounts:
    distance: int
    substitutions: int
    insertions: int
    deletions: int
    matches: int


def levenshtein(ref: str, hyp: str) -> EditCounts:
    """Unit-cost edit distance with counts from a maximum-match alignment.

    The DP objective is lexicographic: minimize cost, then maximize matches,
    so ("ab","ba") reports one match rather than two substitutions.
    """
    n, m = len(ref), len(hyp)
    # (cost, -matches) per cell, two rolling rows
    prev = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0)]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            dc, dm = prev[j - 1]
            if ri == hyp[j - 1]:
                best = (dc, dm - 1)
            else:
                best = (dc + 1, dm)
            up = (prev[j][0] + 1, prev[j][1])
            left = (cur[j - 1][0] + 1, cur[j - 1][1])
            if up < best:
                best = up
            if left < best:
                best = left
            cur.append(best)
        prev = cur
    distance, neg_m = prev[m]
    matches = -neg_m
    subs = n + m - 2 * matches - distance
    return EditCounts(
        distance=distance,
        substitutions=subs,
        insertions=m - matches - subs,
        deletions=n - matches - subs,
        matches=matches,
    )


def ocr_prf(ref: str, hyp: str) -> tuple[float, float, float]:
    """Per-plate precision/recall/F1 from the edit alignment.

    Both strings must already be normalized. Conventions: both empty ->
    (1,1,1); exactly one empty -> (0,0,0).
    """
    if not ref and not hyp:
        return (1.0, 1.0, 1.0)
    if not ref or not hyp:
        return (0.0, 0.0, 0.0)
    m = levenshtein(ref, hyp).matches
    p = m / len(hyp)
    r = m / len(ref)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return (p, r, f1)


def detection_rate(instances_detected: int, instances_total: int) -> float:
    """Percent of annotated instances detected, to one decimal."""
    if instances_total < 1:
        raise ValueError("instances_total must be >= 1")
    if not 0 <= instances_detected <= instances_total:
        raise ValueError("detected count out of range")
    return round(100.0 * instances_detected / instances_total, 1)


# --- annotations ----------------------------------------------------------

@dataclass(frozen=True)
class AnnotationSpan:
    first: int
    last: int
    boxes: dict[int, BoundingBox]


@dataclass(frozen=True)
class PlateAnnotation:
    instance_id: int
    text: str
    spans: tuple[AnnotationSpan, ...]

    def __post_init__(self):
        if not self.text:
            raise ValueError("plate_text must be non-empty")
        ordered = sorted(self.spans, key=lambda s: s.first)
        for a, b in zip(ordered, ordered[1:]):
            if b.first <= a.last:
                raise ValueError(f"overlapping spans in instance {self.instance_id}")

    def box_at(self, frame: int) -> BoundingBox | None:
        for span in self.spans:
            if span.first <= frame <= span.last:
                return span.boxes.get(frame)
        return None

    def frames(self):
        for span in self.spans:
            yield from sorted(span.boxes)


@dataclass(frozen=True)
class VideoAnnotation:
    stream_id: str
    plates: tuple[PlateAnnotation, ...]


def load_annotations(path) -> VideoAnnotation:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("v") != 1:
        raise ValueError(f"unknown annotations version {doc.get('v')!r}")
    plates = tuple(
        PlateAnnotation(
            instance_id=int(p["instance_id"]),
            text=p["text"],
            spans=tuple(
                AnnotationSpan(
                    first=int(s["from"]),
                    last=int(s["to"]),
                    boxes={int(f): BoundingBox.from_dict(b) for f, b in s["boxes"].items()},
                )
                for s in p["spans"]
            ),
        )
        for p in doc["plates"]
    )
    return VideoAnnotation(stream_id=doc["stream_id"], plates=plates)


# --- average precision ----------------------------------------------------

def average_precision(
    dets: list[Detection],
    gts: VideoAnnotation,
    iou_thr: float,
    area_range: tuple[float, float] | None = None,
) -> float:
    """All-points interpolated AP with greedy one-to-one per-frame matching.

    ``area_range`` restricts ground truths to a box-area band (for the
    small/medium/large splits); detections matching an out-of-band truth are
    ignored rather than counted as false positives.
    """
    if not 0 < iou_thr < 1:
        raise ValueError("iou_thr must be in (0,1)")
    gt_by_frame: dict[int, list[dict]] = {}
    n_gt = 0
    for plate in gts.plates:
        for frame in plate.frames():
            box = plate.box_at(frame)
            in_band = area_range is None or area_range[0] <= box.area < area_range[1]
            gt_by_frame.setdefault(frame, []).append(
                {"box": box, "matched": False, "ignore": not in_band}
            )
            n_gt += in_band
    if n_gt == 0:
        raise ValueError("no ground truths to evaluate against")

    ordered = sorted(dets, key=lambda d: (-d.confidence, d.frame_index, d.box.y, d.box.x))
    tp, fp = [], []
    for d in ordered:
        candidates = gt_by_frame.get(d.frame_index, [])
        best, best_iou = None, iou_thr
        for g in candidates:
            if g["matched"]:
                continue
            v = iou(d.box, g["box"])
            if v >= best_iou:
                best, best_iou = g, v
        if best is None:
            tp.append(0)
            fp.append(1)
        elif best["ignore"]:
            best["matched"] = True  # consumed, but scored as neither TP nor FP
        else:
            best["matched"] = True
            tp.append(1)
            fp.append(0)

    ap = 0.0
    cum_tp = cum_fp = 0
    prev_recall = 0.0
    points = []
    for t, f in zip(tp, fp):
        cum_tp += t
        cum_fp += f
        points.append((cum_tp / n_gt, cum_tp / (cum_tp + cum_fp)))
    # precision envelope, all-points interpolation
    for i, (recall, _) in enumerate(points):
        if recall <= prev_recall:
            continue
        peak = max(p for r, p in points[i:])
        ap += (recall - prev_recall) * peak
        prev_recall = recall
    return ap


# --- run scoring ----------------------------------------------------------

@dataclass(frozen=True)
class RunMetrics:
    pipeline_name: str
    precision: float  # percent, one decimal
    recall: float
    f1: float
    detection_rate: float
    fps: float

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline_name,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "detection_rate": self.detection_rate,
            "fps": self.fps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        return cls(d["pipeline"], d["precision"], d["recall"], d["f1"], d["detection_rate"], d["fps"])


@dataclass
class StreamRun:
    """One stream's pipeline output joined with its annotation and OCR texts."""

    result_doc: dict  # parsed instances.json
    annotation: VideoAnnotation
    ocr_texts: dict[int, str]  # pipeline instance id -> raw OCR hypothesis
    frames_processed: int = 0
    wall_time: float = 0.0


def match_instances(result_doc: dict, annotation: VideoAnnotation) -> dict[int, int]:
    """Map annotated instance id -> pipeline instance id via candidate IoU.

    An annotated instance counts as detected iff some finalized candidate box
    reaches IoU >= 0.5 against one of its ground-truth boxes on the same
    frame; ties go to the pipeline instance with the best overlap.
    """
    mapping: dict[int, tuple[float, int]] = {}
    for inst in result_doc["instances"]:
        for cand in inst["candidates"]:
            box = BoundingBox.from_dict(cand["box"])
            frame = cand["frame_index"]
            for plate in annotation.plates:
                gt = plate.box_at(frame)
                if gt is None:
                    continue
                v = iou(box, gt)
                if v >= DETECTED_IOU and v > mapping.get(plate.instance_id, (0.0, -1))[0]:
                    mapping[plate.instance_id] = (v, inst["id"])
    return {ann_id: pid for ann_id, (_, pid) in mapping.items()}


def score_run(runs: list[StreamRun], pipeline_name: str = "pipeline") -> RunMetrics:
    """Macro-averaged P/R/F1 over detected plates plus detection rate and FPS.

    The hypothesis for each detected plate is its pipeline instance's rank-1
    candidate OCR text; both sides are normalized before alignment.
    """
    if not runs:
        raise ValueError("no stream runs to score")
    total = detected = 0
    prf: list[tuple[float, float, float]] = []
    frames = 0
    wall = 0.0
    for run in runs:
        mapping = match_instances(run.result_doc, run.annotation)
        total += len(run.annotation.plates)
        detected += len(mapping)
        for plate in run.annotation.plates:
            pid = mapping.get(plate.instance_id)
            if pid is None:
                continue
            ref = normalize_bangla(plate.text)
            hyp = normalize_bangla(run.ocr_texts.get(pid, ""))
            prf.append(ocr_prf(ref, hyp))
        frames += run.frames_processed
        wall += run.wall_time
    if prf:
        p = sum(x[0] for x in prf) / len(prf)
        r = sum(x[1] for x in prf) / len(prf)
        f1 = sum(x[2] for x in prf) / len(prf)
    else:
        p = r = f1 = 0.0
    fps = frames / wall if wall > 0 else 0.0
    return RunMetrics(
        pipeline_name=pipeline_name,
        precision=round(100 * p, 1),
        recall=round(100 * r, 1),
        f1=round(100 * f1, 1),
        detection_rate=detection_rate(detected, total),
        fps=round(fps, 1),
    )


def collect_stream_run(
    stream_out_dir,
    annotation: VideoAnnotation,
    ocr_mode: str = "mock",
    manifest: dict | None = None,
    error_model: OcrErrorModel = OcrErrorModel(),
    endpoint=None,
) -> StreamRun:
    """Load a persisted stream result and attach rank-1 OCR hypotheses.

    ``ocr_mode``: "mock" looks the matched plate up in the synthetic
    manifest; "http" posts the rank-1 crop to a live OCR service.
    """
    base = Path(stream_out_dir)
    result_doc = json.loads((base / "instances.json").read_text(encoding="utf-8"))
    run_doc = {}
    run_path = base / "run.json"
    if run_path.is_file():
        run_doc = json.loads(run_path.read_text(encoding="utf-8"))

    ocr_texts: dict[int, str] = {}
    mapping = match_instances(result_doc, annotation)
    pipeline_to_ann = {pid: ann_id for ann_id, pid in mapping.items()}
    for inst in result_doc["instances"]:
        if not inst["candidates"]:
            continue
        if ocr_mode == "mock":
            ann_id = pipeline_to_ann.get(inst["id"])
            if ann_id is None:
                continue  # unmatched instance never contributes a hypothesis
            res = mock_recognize(annotation.stream_id, ann_id, manifest, error_model)
        elif ocr_mode == "http":
            import cv2

            from .ocr import recognize

            crop = cv2.imread(str(base / inst["candidates"][0]["crop_path"]), cv2.IMREAD_GRAYSCALE)
            res = recognize(crop, endpoint)
        else:
            raise ValueError(f"unknown ocr mode {ocr_mode!r}")
        ocr_texts[inst["id"]] = res.text
    return StreamRun(
        result_doc=result_doc,
        annotation=annotation,
        ocr_texts=ocr_texts,
        frames_processed=run_doc.get("frames_processed", 0),
        wall_time=run_doc.get("wall_time", 0.0),
    )


# --- ablation report ------------------------------------------------------

_COLUMNS = ["Pipeline", "Precision (%)", "Recall (%)", "F1 Score (%)", "Detection Rate (%)", "FPS"]


def format_ablation_table(runs: list[RunMetrics]) -> str:
    if not runs:
        raise ValueError("no runs to report")
    rows = [
        [
            m.pipeline_name,
            f"{m.precision:.1f}",
            f"{m.recall:.1f}",
            f"{m.f1:.1f}",
            f"{m.detection_rate:.1f}",
            f"{m.fps:.1f}",
        ]
        for m in runs
    ]
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(_COLUMNS)]
    lines = [
        " | ".join(c.ljust(w) for c, w in zip(_COLUMNS, widths)),
        "-+-".join("-" * w for w in widths),
    ]
    lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def render_ablation_figure(runs: list[RunMetrics], path) -> None:
    names = [m.pipeline_name for m in runs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    x = range(len(runs))
    width = 0.2
    for k, (label, values) in enumerate(
        [
            ("Precision", [m.precision for m in runs]),
            ("Recall", [m.recall for m in runs]),
            ("F1", [m.f1 for m in runs]),
            ("Detection rate", [m.detection_rate for m in runs]),
        ]
    ):
        ax1.bar([i + (k - 1.5) * width for i in x], values, width=width, label=label)
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(names, rotation=15, ha="right")
    ax1.set_ylabel("percent")
    ax1.set_ylim(0, 105)
    ax1.legend(fontsize=8)
    ax1.set_title("Recognition and detection")

    ax2.bar(names, [m.fps for m in runs], color="tab:gray")
    ax2.axhline(24, color="tab:red", linestyle="--", linewidth=1, label="real-time bar (24)")
    ax2.set_ylabel("FPS")
    ax2.set_title("Throughput")
    ax2.legend(fontsize=8)
    plt.setp(ax2.get_xticklabels(), rotation=15, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_report(runs: list[RunMetrics], out_dir=None) -> str:
    """Format the comparison table; optionally write report.{txt,json,csv,png}."""
    table = format_ablation_table(runs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table + "\n", encoding="utf-8")
        (out / "report.json").write_text(
            json.dumps({"v": 1, "runs": [m.to_dict() for m in runs]}, indent=1),
            encoding="utf-8",
        )
        csv_lines = [",".join(_COLUMNS)] + [
            f"{m.pipeline_name},{m.precision:.1f},{m.recall:.1f},{m.f1:.1f},{m.detection_rate:.1f},{m.fps:.1f}"
            for m in runs
        ]
        (out / "report.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        render_ablation_figure(runs, out / "report.png")
    return table


def load_report(path) -> list[RunMetrics]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RunMetrics.from_dict(d) for d in doc["runs"]]
