"""Box geometry, NMS, and detections-file loading."""

import json
import random

import pytest

from optdialog import (
    BoundingBox,
    BoxFormat,
    DuplicateImageEntry,
    MalformedRecord,
    NmsConfig,
    NonPositiveDimension,
    RawDetection,
    iou,
    load_detections,
    nms,
    perception_tokens,
)
from optdialog.detection import denormalize_box, normalize_box

from conftest import GOLDEN_DETECTIONS, GOLDEN_KEPT_BOXES


def center(cx, cy, w, h, score=0.9):
    return RawDetection(box=(cx, cy, w, h), box_format=BoxFormat.CENTER_WH, score=score)


class TestIou:
    def test_identical_boxes(self):
        box = BoundingBox(0.5, 0.5, 0.4, 0.4)
        assert iou(box, box) == 1.0

    def test_disjoint_boxes(self):
        a = BoundingBox(0.2, 0.2, 0.2, 0.2)
        b = BoundingBox(0.8, 0.8, 0.2, 0.2)
        assert iou(a, b) == 0.0

    def test_touching_edges_do_not_overlap(self):
        a = BoundingBox(0.25, 0.5, 0.5, 0.5)
        b = BoundingBox(0.75, 0.5, 0.5, 0.5)
        assert iou(a, b) == 0.0

    def test_half_shift_gives_one_third(self):
        # [0, 0.5]^2 against the same square shifted right by half its width
        a = BoundingBox(0.25, 0.25, 0.5, 0.5)
        b = BoundingBox(0.5, 0.25, 0.5, 0.5)
        assert iou(a, b) == pytest.approx(1 / 3)

    def test_contained_quarter_area(self):
        outer = BoundingBox(0.5, 0.5, 0.4, 0.4)
        inner = BoundingBox(0.5, 0.5, 0.2, 0.2)
        assert iou(outer, inner) == pytest.approx(0.25)

    def test_symmetry(self):
        rng = random.Random(7)
        for _ in range(50):
            a = BoundingBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                            rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4))
            b = BoundingBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                            rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4))
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0


class TestNormalizeBox:
    def test_center_full_frame(self):
        det = center(320, 320, 640, 640)
        box = normalize_box(det, 640, 640)
        assert (box.cx, box.cy, box.w, box.h) == (0.5, 0.5, 1.0, 1.0)

    def test_corner_quarter_frame(self):
        det = RawDetection(box=(0, 0, 320, 320),
                           box_format=BoxFormat.CORNER_XYXY, score=0.9)
        box = normalize_box(det, 640, 640)
        assert (box.cx, box.cy, box.w, box.h) == (0.25, 0.25, 0.5, 0.5)

    def test_overhanging_box_is_clamped(self):
        det = center(0, 0, 200, 200)
        box = normalize_box(det, 640, 640)
        x1, y1, x2, y2 = box.corners()
        assert x1 == pytest.approx(0.0)
        assert y1 == pytest.approx(0.0)
        assert x2 == pytest.approx(100 / 640)
        assert y2 == pytest.approx(100 / 640)

    def test_zero_width_rejected(self):
        with pytest.raises(NonPositiveDimension):
            normalize_box(center(0.5, 0.5, 0.0, 0.2), 1, 1)

    def test_fully_outside_frame_rejected(self):
        det = RawDetection(box=(700, 700, 800, 800),
                           box_format=BoxFormat.CORNER_XYXY, score=0.9)
        with pytest.raises(NonPositiveDimension):
            normalize_box(det, 640, 640)

    def test_bad_image_dimensions_rejected(self):
        with pytest.raises(ValueError):
            normalize_box(center(0.5, 0.5, 0.2, 0.2), 0, 640)

    def test_denormalize_round_trip(self):
        rng = random.Random(11)
        for _ in range(100):
            w = rng.uniform(0.05, 0.5)
            h = rng.uniform(0.05, 0.5)
            cx = rng.uniform(w / 2, 1 - w / 2)
            cy = rng.uniform(h / 2, 1 - h / 2)
            det = center(cx * 640, cy * 480, w * 640, h * 480)
            box = normalize_box(det, 640, 480)
            back = denormalize_box(box, 640, 480)
            for got, want in zip(back, det.box):
                assert got == pytest.approx(want, abs=1e-9)


class TestNmsConfig:
    def test_defaults(self):
        cfg = NmsConfig()
        assert cfg.score_threshold == 0.5
        assert cfg.iou_threshold == 0.5
        assert cfg.max_detections == 20

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"score_threshold": -0.1},
            {"score_threshold": 1.5},
            {"iou_threshold": 2.0},
            {"max_detections": 0},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            NmsConfig(**kwargs)


class TestNms:
    def test_overlapping_lower_score_suppressed(self):
        cfg = NmsConfig()
        dets = [
            center(0.5, 0.5, 0.6, 0.6, score=0.9),
            center(0.52, 0.52, 0.6, 0.6, score=0.8),
            center(0.1, 0.1, 0.1, 0.1, score=0.7),
        ]
        kept = nms(dets, cfg)
        assert len(kept) == 2
        assert kept.scores == (0.9, 0.7)

    def test_score_threshold_filters_first(self):
        cfg = NmsConfig()
        dets = [center(0.5, 0.5, 0.2, 0.2, score=0.49)]
        assert len(nms(dets, cfg)) == 0
        dets = [center(0.5, 0.5, 0.2, 0.2, score=0.5)]
        assert len(nms(dets, cfg)) == 1

    def test_iou_exactly_at_threshold_survives(self):
        # IoU of these two is exactly 1/3; a threshold of 1/3 keeps both
        cfg = NmsConfig(iou_threshold=1 / 3)
        dets = [
            center(0.25, 0.25, 0.5, 0.5, score=0.9),
            center(0.5, 0.25, 0.5, 0.5, score=0.8),
        ]
        assert len(nms(dets, cfg)) == 2
        tighter = NmsConfig(iou_threshold=0.33)
        assert len(nms(dets, tighter)) == 1

    def test_result_ordered_by_descending_score(self):
        cfg = NmsConfig()
        dets = [
            center(0.1, 0.1, 0.1, 0.1, score=0.6),
            center(0.9, 0.9, 0.1, 0.1, score=0.95),
            center(0.5, 0.5, 0.1, 0.1, score=0.7),
        ]
        kept = nms(dets, cfg)
        assert kept.scores == (0.95, 0.7, 0.6)

    def test_ties_keep_input_order(self):
        cfg = NmsConfig()
        dets = [
            center(0.2, 0.2, 0.1, 0.1, score=0.8),
            center(0.8, 0.8, 0.1, 0.1, score=0.8),
        ]
        kept = nms(dets, cfg)
        assert kept.boxes[0].cx == pytest.approx(0.2)
        assert kept.boxes[1].cx == pytest.approx(0.8)

    def test_cap_at_max_detections(self):
        cfg = NmsConfig(max_detections=3)
        dets = [
            center(0.1 + 0.09 * i, 0.5, 0.05, 0.05, score=0.9 - 0.01 * i)
            for i in range(10)
        ]
        assert len(nms(dets, cfg)) == 3

    def test_empty_input(self):
        kept = nms([], NmsConfig(), image_id="x")
        assert len(kept) == 0
        assert kept.image_id == "x"

    def test_idempotent_on_own_output(self):
        rng = random.Random(23)
        cfg = NmsConfig()
        for _ in range(50):
            dets = [
                center(
                    rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                    rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3),
                    score=round(rng.uniform(0.5, 1.0), 3),
                )
                for _ in range(rng.randint(0, 15))
            ]
            first = nms(dets, cfg)
            again = nms(
                [
                    center(b.cx, b.cy, b.w, b.h, score=s)
                    for b, s in zip(first.boxes, first.scores)
                ],
                cfg,
            )
            # re-normalization recenters through the corners, so coordinates
            # may move by an ulp; the selection itself must not change
            assert again.scores == first.scores
            for before, after in zip(first.boxes, again.boxes):
                assert after.cx == pytest.approx(before.cx, abs=1e-12)
                assert after.cy == pytest.approx(before.cy, abs=1e-12)
                assert after.w == pytest.approx(before.w, abs=1e-12)
                assert after.h == pytest.approx(before.h, abs=1e-12)

    def test_kept_boxes_respect_pairwise_bound(self):
        rng = random.Random(31)
        cfg = NmsConfig(iou_threshold=0.4)
        for _ in range(50):
            dets = [
                center(
                    rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                    rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4),
                    score=rng.uniform(0.5, 1.0),
                )
                for _ in range(rng.randint(0, 20))
            ]
            kept = nms(dets, cfg)
            boxes = kept.boxes
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert iou(boxes[i], boxes[j]) <= cfg.iou_threshold


class TestPerceptionTokens:
    def test_pixel_boxes_are_normalized(self):
        cfg = NmsConfig()
        dets = [center(320, 320, 640, 640, score=0.9)]
        tokens = perception_tokens(dets, cfg, 640, 640, image_id="img")
        assert len(tokens) == 1
        box = tokens.boxes[0]
        assert (box.cx, box.cy, box.w, box.h) == (0.5, 0.5, 1.0, 1.0)

    def test_out_of_frame_box_dropped_not_fatal(self, caplog):
        cfg = NmsConfig()
        dets = [
            RawDetection(box=(700, 700, 800, 800),
                         box_format=BoxFormat.CORNER_XYXY, score=0.9),
            center(100, 100, 50, 50, score=0.8),
        ]
        with caplog.at_level("WARNING"):
            tokens = perception_tokens(dets, cfg, 640, 640, image_id="img")
        assert len(tokens) == 1

    def test_golden_corpus_kept_counts(self, tmp_path):
        # exercises the same data the protocol fixtures rely on
        path = tmp_path / "dets.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for image_id, dets in GOLDEN_DETECTIONS.items():
                for det in dets:
                    fh.write(json.dumps({"image_id": image_id, **det}) + "\n")
        loaded = load_detections(path)
        cfg = NmsConfig()
        for image_id, expected in GOLDEN_KEPT_BOXES.items():
            tokens = perception_tokens(
                loaded.get(image_id, []), cfg, 640, 640, image_id=image_id
            )
            assert len(tokens) == expected, image_id


class TestLoadDetections:
    def write(self, tmp_path, lines):
        path = tmp_path / "d.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def good(self, image_id="img01", score=0.9):
        return json.dumps(
            {
                "image_id": image_id,
                "format": "center_wh",
                "box": [100, 100, 50, 50],
                "score": score,
            }
        )

    def test_loads_and_groups_by_image(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                self.good("a", 0.9),
                self.good("b", 0.8),
                self.good("a", 0.7),
                "",
            ],
        )
        loaded = load_detections(path)
        assert sorted(loaded) == ["a", "b"]
        assert len(loaded["a"]) == 2
        assert loaded["a"][0].score == 0.9

    def test_class_hint_passthrough(self, tmp_path):
        record = json.dumps(
            {
                "image_id": "a",
                "format": "corner_xyxy",
                "box": [0, 0, 10, 10],
                "score": 0.6,
                "class_hint": "fruit",
            }
        )
        loaded = load_detections(self.write(tmp_path, [record]))
        assert loaded["a"][0].class_hint == "fruit"

    def test_invalid_json_reports_line(self, tmp_path):
        path = self.write(tmp_path, [self.good(), "{not json"])
        with pytest.raises(MalformedRecord) as err:
            load_detections(path)
        assert err.value.lineno == 2

    def test_score_out_of_range(self, tmp_path):
        path = self.write(tmp_path, [self.good(score=1.5)])
        with pytest.raises(MalformedRecord):
            load_detections(path)

    def test_unknown_format(self, tmp_path):
        record = json.dumps(
            {"image_id": "a", "format": "yolo", "box": [1, 1, 2, 2], "score": 0.9}
        )
        with pytest.raises(MalformedRecord):
            load_detections(self.write(tmp_path, [record]))

    def test_degenerate_corner_box(self, tmp_path):
        record = json.dumps(
            {
                "image_id": "a",
                "format": "corner_xyxy",
                "box": [10, 10, 10, 20],
                "score": 0.9,
            }
        )
        with pytest.raises(MalformedRecord):
            load_detections(self.write(tmp_path, [record]))

    def test_wrong_arity_box(self, tmp_path):
        record = json.dumps(
            {"image_id": "a", "format": "center_wh", "box": [1, 2, 3], "score": 0.9}
        )
        with pytest.raises(MalformedRecord):
            load_detections(self.write(tmp_path, [record]))

    def test_exact_duplicate_rejected(self, tmp_path):
        path = self.write(tmp_path, [self.good(), self.good()])
        with pytest.raises(DuplicateImageEntry):
            load_detections(path)

    def test_same_image_different_boxes_allowed(self, tmp_path):
        path = self.write(tmp_path, [self.good(score=0.9), self.good(score=0.8)])
        loaded = load_detections(path)
        assert len(loaded["img01"]) == 2
