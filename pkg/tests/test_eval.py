"""Cropped-metric evaluation: bounding boxes, PSNR, reports."""

import json

import numpy as np
import pytest

from gsx.evaluation import (PSNR_CAP_DB, EvaluationError, MetricRow,
                            evaluate_object, expand_bbox, psnr, report_json,
                            report_table, rows_to_csv, summarize_scene,
                            tight_bbox)


class TestTightBbox:
    def test_nonwhite_pixels(self):
        img = np.ones((20, 30, 3))
        img[5:9, 10:17] = 0.3
        assert tight_bbox(img) == (5, 10, 8, 16)

    def test_alpha_preferred_when_given(self):
        img = np.ones((10, 10, 3))          # all white
        alpha = np.zeros((10, 10))
        alpha[2:5, 3:7] = 0.8
        assert tight_bbox(img, alpha) == (2, 3, 4, 6)

    def test_near_white_threshold(self):
        img = np.ones((8, 8, 3))
        img[4, 4] = 251.0 / 255.0           # above threshold: still "white"
        with pytest.raises(EvaluationError):
            tight_bbox(img)
        img[4, 4] = 249.0 / 255.0
        assert tight_bbox(img) == (4, 4, 4, 4)

    def test_empty_raises(self):
        with pytest.raises(EvaluationError):
            tight_bbox(np.ones((5, 5, 3)))


class TestExpandBbox:
    def test_span_semantics_example(self):
        # 1.2x expansion of (10,30)-(20,60) in a 200x200 image.
        assert expand_bbox((10, 30, 20, 60), 1.2, 200, 200) == (9, 27, 21, 63)

    def test_identity_factor(self):
        assert expand_bbox((3, 4, 9, 12), 1.0, 50, 50) == (3, 4, 9, 12)

    def test_clamped_to_image(self):
        r = expand_bbox((0, 0, 10, 10), 2.0, 12, 12)
        assert r == (0, 0, 11, 11)

    def test_degenerate_single_pixel(self):
        assert expand_bbox((5, 5, 5, 5), 1.5, 20, 20) == (5, 5, 5, 5)


class TestPsnr:
    def test_identical_capped(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(x, x) == PSNR_CAP_DB

    def test_known_value(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.5)
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / 0.25))

    def test_shape_mismatch(self):
        with pytest.raises(EvaluationError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestEvaluateObject:
    def _views(self, rng, n=3, size=32):
        gts, preds = [], []
        for _ in range(n):
            gt = np.ones((size, size, 3))
            gt[8:24, 8:24] = rng.random(3)
            noise = rng.normal(0.0, 0.01, gt.shape)
            preds.append(np.clip(gt + noise, 0, 1))
            gts.append(gt)
        return preds, gts

    def test_rows_and_summary(self, rng):
        preds, gts = self._views(rng)
        rows, summary = evaluate_object(preds, gts, scene_id="s", object_id=2)
        assert len(rows) == 3
        assert summary["views"] == 3
        assert summary["lpips"] == "unavailable"
        assert 30.0 < summary["mean_psnr"] < 60.0
        assert 0.5 < summary["mean_ssim"] <= 1.0

    def test_crop_from_gt_not_prediction(self, rng):
        preds, gts = self._views(rng, n=1)
        # Corrupt the prediction far from the object: the GT-derived crop
        # must exclude it, leaving the score unchanged.
        dirty = [preds[0].copy()]
        dirty[0][0:2, 0:2] = 0.0
        rows_a, _ = evaluate_object(preds, gts)
        rows_b, _ = evaluate_object(dirty, gts)
        assert rows_a[0].psnr == rows_b[0].psnr
        assert rows_a[0].crop == rows_b[0].crop

    def test_empty_gt_view_skipped_with_warning(self, rng):
        preds, gts = self._views(rng, n=2)
        gts[1] = np.ones_like(gts[1])
        with pytest.warns(UserWarning):
            rows, summary = evaluate_object(preds, gts)
        assert len(rows) == 1 and summary["views"] == 1

    def test_all_empty_gives_none_means(self, rng):
        with pytest.warns(UserWarning):
            rows, summary = evaluate_object([np.ones((16, 16, 3))],
                                            [np.ones((16, 16, 3))])
        assert rows == [] and summary["mean_psnr"] is None

    def test_count_mismatch(self, rng):
        preds, gts = self._views(rng, n=2)
        with pytest.raises(EvaluationError):
            evaluate_object(preds, gts[:1])

    def test_small_crop_ssim_window_clamped(self, rng):
        gt = np.ones((16, 16, 3))
        gt[7:10, 7:10] = 0.2
        pred = gt.copy()
        rows, _ = evaluate_object([pred], [gt])
        assert rows[0].ssim == pytest.approx(1.0)

    def test_perfect_prediction(self, rng):
        _, gts = self._views(rng, n=2)
        rows, summary = evaluate_object([g.copy() for g in gts], gts)
        assert summary["mean_psnr"] == PSNR_CAP_DB
        assert summary["mean_ssim"] == pytest.approx(1.0)


class TestReports:
    def _sample(self):
        rows = [MetricRow("s", 1, 0, 30.0, 0.9, (1, 2, 3, 4)),
                MetricRow("s", 1, 1, 34.0, 0.95, (1, 2, 3, 4))]
        summary = {"scene_id": "s", "object_id": 1, "views": 2,
                   "mean_psnr": 32.0, "mean_ssim": 0.925,
                   "lpips": "unavailable"}
        return rows, summary

    def test_csv(self):
        rows, _ = self._sample()
        text = rows_to_csv(rows)
        lines = text.strip().splitlines()
        assert lines[0].split(",")[:4] == ["scene_id", "object_id",
                                          "view_id", "psnr"]
        assert len(lines) == 3

    def test_scene_summary_is_mean_of_db(self):
        _, s1 = self._sample()
        s2 = dict(s1, object_id=2, mean_psnr=20.0, mean_ssim=0.8)
        scene = summarize_scene([s1, s2])
        assert scene["mean_psnr"] == pytest.approx(26.0)
        assert scene["mean_ssim"] == pytest.approx(0.8625)

    def test_json_round_trip(self, tmp_path):
        rows, summary = self._sample()
        payload = report_json(rows, [summary], summarize_scene([summary]))
        data = json.loads(payload)
        assert data["scene"]["mean_psnr"] == 32.0
        assert len(data["rows"]) == 2

    def test_table_mentions_lpips_unavailable(self):
        _, summary = self._sample()
        table = report_table([summary], summarize_scene([summary]))
        assert "unavailable" in table
        assert "32.0" in table
