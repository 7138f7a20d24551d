import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import levenshtein_oracle
from plateflow.detect import DetectorConfig
from plateflow.eval import (
    AnnotationSpan,
    PlateAnnotation,
    RunMetrics,
    VideoAnnotation,
    ablation_report,
    average_precision,
    collect_stream_run,
    detection_rate,
    format_ablation_table,
    levenshtein,
    load_annotations,
    load_report,
    match_instances,
    ocr_prf,
    score_run,
)
from plateflow.geometry import BoundingBox, Detection


class TestLevenshtein:
    def test_identity(self):
        c = levenshtein("abc", "abc")
        assert (c.distance, c.matches, c.substitutions, c.insertions, c.deletions) == (0, 3, 0, 0, 0)

    def test_kitten_sitting(self):
        c = levenshtein("kitten", "sitting")
        assert c.distance == 3
        assert c.substitutions == 2
        assert c.insertions == 1
        assert c.deletions == 0
        assert c.matches == 4

    def test_transposition_max_match_tiebreak(self):
        c = levenshtein("ab", "ba")
        assert c.distance == 2
        assert c.matches == 1
        assert c.insertions == 1 and c.deletions == 1 and c.substitutions == 0

    def test_empty_sides(self):
        assert levenshtein("", "").distance == 0
        assert levenshtein("abc", "").deletions == 3
        assert levenshtein("", "abc").insertions == 3

    def test_oracle_equivalence_sample(self):
        # spot sample here; the exhaustive sweep lives in the acceptance suite
        rng = np.random.default_rng(6)
        alphabet = "abc"
        for _ in range(500):
            ref = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 6))))
            hyp = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 6))))
            c = levenshtein(ref, hyp)
            assert (c.distance, c.matches) == levenshtein_oracle(ref, hyp)

    @given(st.text(alphabet="abcd", max_size=8), st.text(alphabet="abcd", max_size=8))
    def test_count_identities(self, ref, hyp):
        c = levenshtein(ref, hyp)
        assert c.distance == c.substitutions + c.insertions + c.deletions
        assert len(ref) == c.matches + c.substitutions + c.deletions
        assert len(hyp) == c.matches + c.substitutions + c.insertions


class TestOcrPrf:
    def test_kitten_sitting(self):
        p, r, f1 = ocr_prf("kitten", "sitting")
        assert p == pytest.approx(4 / 7)
        assert r == pytest.approx(2 / 3)
        assert f1 == pytest.approx(8 / 13)

    def test_identical(self):
        assert ocr_prf("abc", "abc") == (1.0, 1.0, 1.0)

    def test_conventions(self):
        assert ocr_prf("", "") == (1.0, 1.0, 1.0)
        assert ocr_prf("abc", "") == (0.0, 0.0, 0.0)
        assert ocr_prf("", "abc") == (0.0, 0.0, 0.0)

    @given(st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8))
    def test_bounds_and_f1_iff_equal(self, ref, hyp):
        p, r, f1 = ocr_prf(ref, hyp)
        assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f1 <= 1
        assert f1 <= max(p, r) + 1e-12
        if ref == hyp:
            assert f1 == 1.0
        if f1 == 1.0:
            assert ref == hyp


class TestDetectionRate:
    def test_spot_values(self):
        assert detection_rate(81, 98) == 82.7
        assert detection_rate(0, 5) == 0.0
        assert detection_rate(5, 5) == 100.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            detection_rate(6, 5)
        with pytest.raises(ValueError):
            detection_rate(1, 0)


def annotation_of(boxes_by_frame, instance_id=1, text="ঘ১২", stream_id="s"):
    frames = sorted(boxes_by_frame)
    return VideoAnnotation(
        stream_id=stream_id,
        plates=(
            PlateAnnotation(
                instance_id=instance_id,
                text=text,
                spans=(AnnotationSpan(frames[0], frames[-1], dict(boxes_by_frame)),),
            ),
        ),
    )


class TestAveragePrecision:
    def test_perfect_detections(self):
        gt = annotation_of({0: BoundingBox(10, 10, 50, 30), 1: BoundingBox(12, 10, 50, 30)})
        dets = [
            Detection(BoundingBox(10, 10, 50, 30), 0.9, frame_index=0),
            Detection(BoundingBox(12, 10, 50, 30), 0.8, frame_index=1),
        ]
        assert average_precision(dets, gt, 0.5) == pytest.approx(1.0)

    def test_half_found(self):
        # one of two truths matched at full precision: AP = 0.5
        gt = annotation_of({0: BoundingBox(10, 10, 50, 30), 1: BoundingBox(12, 10, 50, 30)})
        dets = [Detection(BoundingBox(10, 10, 50, 30), 0.9, frame_index=0)]
        assert average_precision(dets, gt, 0.5) == pytest.approx(0.5)

    def test_low_scored_false_positive_cannot_raise_ap(self):
        gt = annotation_of({0: BoundingBox(10, 10, 50, 30)})
        hit = [Detection(BoundingBox(10, 10, 50, 30), 0.9, frame_index=0)]
        with_fp = hit + [Detection(BoundingBox(200, 200, 20, 20), 0.1, frame_index=0)]
        assert average_precision(with_fp, gt, 0.5) <= average_precision(hit, gt, 0.5)

    def test_area_range_ignore(self):
        # the small truth is out of band: matching it is neither TP nor FP
        gt = VideoAnnotation(
            stream_id="s",
            plates=(
                PlateAnnotation(1, "ক১", (AnnotationSpan(0, 0, {0: BoundingBox(0, 0, 10, 10)}),)),
                PlateAnnotation(2, "ক২", (AnnotationSpan(0, 0, {0: BoundingBox(100, 100, 60, 60)}),)),
            ),
        )
        dets = [
            Detection(BoundingBox(0, 0, 10, 10), 0.9, frame_index=0),
            Detection(BoundingBox(100, 100, 60, 60), 0.8, frame_index=0),
        ]
        assert average_precision(dets, gt, 0.5, area_range=(32**2, float("inf"))) == pytest.approx(1.0)

    def test_no_ground_truth_rejected(self):
        gt = annotation_of({0: BoundingBox(0, 0, 10, 10)})
        with pytest.raises(ValueError):
            average_precision([], gt, 0.5, area_range=(32**2, 96**2))

    def test_bounds_on_random_inputs(self):
        rng = np.random.default_rng(33)
        gt = annotation_of({f: BoundingBox(20, 20, 40, 20) for f in range(5)})
        for _ in range(50):
            dets = [
                Detection(
                    BoundingBox(float(rng.integers(0, 60)), float(rng.integers(0, 60)), 40, 20),
                    float(rng.uniform(0, 1)),
                    frame_index=int(rng.integers(0, 5)),
                )
                for _ in range(int(rng.integers(0, 10)))
            ]
            assert 0.0 <= average_precision(dets, gt, 0.5) <= 1.0


class TestScoreRunClosedLoop:
    def test_synthetic_stream_zero_error_ocr(self, synth_stream, tmp_path):
        from plateflow.ocr import load_ocr_manifest
        from plateflow.pipeline import FrameSource, PipelineConfig, process_stream

        annotation = load_annotations(synth_stream / "annotations.json")
        manifest = load_ocr_manifest(synth_stream / "ocr_manifest.json")
        source = FrameSource(synth_stream)
        process_stream(
            source,
            PipelineConfig(backbone=DetectorConfig(kind="oracle")),
            annotations=annotation,
            out_dir=tmp_path,
        )
        run = collect_stream_run(tmp_path / source.stream_id, annotation, "mock", manifest)
        metrics = score_run([run], pipeline_name="closed-loop")
        assert metrics.detection_rate == 100.0
        assert metrics.precision == 100.0
        assert metrics.recall == 100.0
        assert metrics.f1 == 100.0
        assert metrics.fps > 0

    def test_match_instances_requires_overlap(self):
        annotation = annotation_of({3: BoundingBox(10, 10, 60, 30)})
        doc = {
            "instances": [
                {
                    "id": 0,
                    "candidates": [
                        {
                            "rank": 1,
                            "frame_index": 3,
                            "confidence": 1.0,
                            "box": BoundingBox(200, 200, 60, 30).to_dict(),
                        }
                    ],
                }
            ]
        }
        assert match_instances(doc, annotation) == {}
        doc["instances"][0]["candidates"][0]["box"] = BoundingBox(11, 10, 60, 30).to_dict()
        assert match_instances(doc, annotation) == {1: 0}


class TestReport:
    def metrics(self, name="p1"):
        return RunMetrics(name, 92.5, 88.3, 90.4, 95.0, 31.2)

    def test_single_row_table(self):
        table = format_ablation_table([self.metrics()])
        lines = table.splitlines()
        assert len(lines) == 3
        assert "Pipeline" in lines[0] and "FPS" in lines[0]
        assert "92.5" in lines[2]

    def test_report_files_and_round_trip(self, tmp_path):
        runs = [self.metrics("full"), RunMetrics("no-gate", 90.0, 85.0, 87.4, 93.0, 11.0)]
        ablation_report(runs, tmp_path)
        for name in ("report.txt", "report.json", "report.csv", "report.png"):
            assert (tmp_path / name).is_file()
        assert (tmp_path / "report.png").stat().st_size > 1000
        assert load_report(tmp_path / "report.json") == runs
        csv = (tmp_path / "report.csv").read_text().splitlines()
        assert len(csv) == 3 and csv[1].startswith("full,92.5")

    def test_empty_runs_rejected(self):
        with pytest.raises(ValueError):
            format_ablation_table([])


class TestAnnotations:
    def test_load_round_trip(self, synth_stream):
        ann = load_annotations(synth_stream / "annotations.json")
        assert ann.stream_id == "stream-fix"
        assert len(ann.plates) == 3
        for plate in ann.plates:
            frames = list(plate.frames())
            assert frames == sorted(frames)
            for f in frames:
                box = plate.box_at(f)
                assert box is not None
                assert box.x >= 0 and box.y >= 0

    def test_overlapping_spans_rejected(self):
        with pytest.raises(ValueError):
            PlateAnnotation(
                1,
                "ক১",
                (
                    AnnotationSpan(0, 10, {0: BoundingBox(0, 0, 5, 5)}),
                    AnnotationSpan(5, 15, {5: BoundingBox(0, 0, 5, 5)}),
                ),
            )

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            PlateAnnotation(1, "", (AnnotationSpan(0, 0, {0: BoundingBox(0, 0, 5, 5)}),))
