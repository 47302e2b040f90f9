import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panofuse.dataset_io import Detection
from panofuse.errors import ConfigInvalid
from panofuse.geometry import Mask
from panofuse.nms import (
    NmsConfig,
    box_contains,
    box_iou,
    corners_within,
    custom_nms,
    per_class_nms,
)

_MASK = Mask.from_array(np.ones((2, 2), dtype=bool))
_EMB = np.array([1.0, 0.0, 0.0, 0.0])


def det(bbox, conf=0.9, label="chair", caption=False):
    return Detection(
        bbox=tuple(float(b) for b in bbox),
        confidence=conf,
        label=label,
        embedding=_EMB,
        mask=_MASK,
        from_caption=caption,
    )


class TestConfig:
    def test_defaults_valid(self):
        NmsConfig().validate()

    def test_rejects_negative_tau(self):
        with pytest.raises(ConfigInvalid):
            NmsConfig(tau_coord=-0.1).validate()

    def test_rejects_bad_baseline(self):
        with pytest.raises(ConfigInvalid):
            NmsConfig(baseline_iou=0.0).validate()
        with pytest.raises(ConfigInvalid):
            NmsConfig(baseline_iou=1.5).validate()


class TestBoxPredicates:
    def test_iou_of_known_boxes(self):
        assert box_iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
        assert box_iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
        # 5x10 overlap over union 150.
        assert box_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_corners_within_is_per_corner_chebyshev(self):
        a = (10.0, 10.0, 50.0, 50.0)
        assert corners_within(a, (10.5, 10.5, 50.5, 50.5), 1.5)
        assert corners_within(a, (11.5, 10.0, 50.0, 48.5), 1.5)
        # One corner close, the other far: not a duplicate.
        assert not corners_within(a, (10.0, 10.0, 60.0, 50.0), 1.5)

    def test_containment_closed_intervals(self):
        assert box_contains((0, 0, 10, 10), (0, 0, 10, 10))
        assert box_contains((0, 0, 10, 10), (2, 2, 8, 8))
        assert not box_contains((2, 2, 8, 8), (0, 0, 10, 10))


class TestCustomNms:
    def test_single_detection_unchanged(self):
        d = det((10, 10, 50, 50))
        assert custom_nms([d]) == [d]

    def test_near_duplicate_suppressed_across_labels(self):
        a = det((10, 10, 50, 50), conf=0.9, label="chair")
        b = det((10.5, 10.5, 50.5, 50.5), conf=0.8, label="wooden chair")
        assert custom_nms([a, b]) == [a]
        # Corner offsets are 0.5 <= 1.5 regardless of order.
        assert custom_nms([b, a]) == [a]

    def test_containment_needs_same_category(self):
        a = det((10, 10, 50, 50), conf=0.9, label="chair")
        b = det((20, 20, 40, 40), conf=0.8, label="chair")
        assert custom_nms([a, b]) == [a]
        assert custom_nms([a, b], categories=[0, 0]) == [a]
        # Different unified category: the nested box survives.
        assert custom_nms([a, b], categories=[0, 1]) == [a, b]

    def test_caption_provenance_breaks_ties(self):
        a = det((10, 10, 50, 50), conf=0.9, caption=True)
        b = det((11, 11, 51, 51), conf=0.9, caption=False)
        assert custom_nms([a, b]) == [a]
        assert custom_nms([b, a]) == [a]
        # With the preference disabled, input order decides the tie.
        cfg = NmsConfig(prefer_caption=False)
        assert custom_nms([b, a], cfg) == [b]

    def test_higher_priority_nested_box_still_unique_survivor(self):
        # The inner box outranks the outer one; the outer must not survive
        # alongside it.
        inner = det((20, 20, 40, 40), conf=0.95, label="chair")
        outer = det((10, 10, 50, 50), conf=0.60, label="chair")
        assert custom_nms([outer, inner], categories=[0, 0]) == [inner]

    def test_survivors_keep_input_order(self):
        a = det((0, 0, 10, 10), conf=0.5)
        b = det((100, 100, 110, 110), conf=0.9)
        assert custom_nms([a, b]) == [a, b]


def _no_duplicates_or_nesting(survivors, cats, cfg):
    for i in range(len(survivors)):
        for j in range(len(survivors)):
            if i == j:
                continue
            assert not corners_within(
                survivors[i].bbox, survivors[j].bbox, cfg.tau_coord
            )
            if cats[i] == cats[j]:
                assert not box_contains(survivors[i].bbox, survivors[j].bbox)


@st.composite
def random_detections(draw):
    n = draw(st.integers(0, 12))
    dets, cats = [], []
    for _ in range(n):
        x0 = draw(st.floats(0, 80))
        y0 = draw(st.floats(0, 80))
        w = draw(st.floats(1, 40))
        h = draw(st.floats(1, 40))
        conf = draw(st.floats(0.01, 1.0))
        caption = draw(st.booleans())
        dets.append(det((x0, y0, x0 + w, y0 + h), conf=conf, caption=caption))
        cats.append(draw(st.integers(0, 2)))
    return dets, cats


class TestCustomNmsProperties:
    @settings(max_examples=80, deadline=None)
    @given(random_detections())
    def test_idempotent(self, case):
        dets, cats = case
        cfg = NmsConfig()
        once = custom_nms(dets, cfg, cats)
        cat_of = {id(d): c for d, c in zip(dets, cats)}
        twice = custom_nms(once, cfg, [cat_of[id(d)] for d in once])
        assert twice == once

    @settings(max_examples=80, deadline=None)
    @given(random_detections())
    def test_postconditions(self, case):
        dets, cats = case
        cfg = NmsConfig()
        out = custom_nms(dets, cfg, cats)
        assert all(d in dets for d in out)
        cat_of = {id(d): c for d, c in zip(dets, cats)}
        _no_duplicates_or_nesting(out, [cat_of[id(d)] for d in out], cfg)

    def test_permutation_invariant_with_distinct_keys(self):
        rng = np.random.default_rng(17)
        dets = []
        confs = rng.permutation(np.linspace(0.1, 0.95, 8))
        for i in range(8):
            x0, y0 = rng.uniform(0, 60, size=2)
            dets.append(det((x0, y0, x0 + 20, y0 + 15), conf=float(confs[i])))
        cats = [int(c) for c in rng.integers(0, 2, size=8)]
        base = custom_nms(dets, NmsConfig(), cats)
        order = rng.permutation(8)
        shuffled = [dets[i] for i in order]
        out = custom_nms(shuffled, NmsConfig(), [cats[i] for i in order])
        assert sorted(id(d) for d in out) == sorted(id(d) for d in base)


def _per_class_oracle(dets, cats, thr):
    """Independent O(n^2) reference: repeatedly take the best remaining box."""
    remaining = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [
            i
            for i in remaining
            if cats[i] != cats[best] or box_iou(dets[i].bbox, dets[best].bbox) < thr
        ]
    return sorted(kept)


class TestPerClassNms:
    def test_same_category_overlap_suppressed(self):
        a = det((0, 0, 10, 10), conf=0.9)
        b = det((0, 3, 10, 13), conf=0.8)  # IoU 7/13 ~ 0.54
        assert per_class_nms([a, b], categories=[0, 0]) == [a]

    def test_cross_category_overlap_kept(self):
        a = det((0, 0, 10, 10), conf=0.9)
        b = det((0, 3, 10, 13), conf=0.8)
        assert per_class_nms([a, b], categories=[0, 1]) == [a, b]

    def test_matches_oracle_on_random_frame(self):
        rng = np.random.default_rng(5)
        dets, cats = [], []
        for _ in range(50):
            x0, y0 = rng.uniform(0, 100, size=2)
            w, h = rng.uniform(5, 40, size=2)
            dets.append(det((x0, y0, x0 + w, y0 + h), conf=float(rng.uniform(0.1, 1))))
            cats.append(int(rng.integers(0, 3)))
        cfg = NmsConfig()
        got = per_class_nms(dets, cfg, cats)
        want = [dets[i] for i in _per_class_oracle(dets, cats, cfg.baseline_iou)]
        assert got == want
