import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfra.errors import EmptyCategory, EmptySupport, ShapeError
from kfra.evidence import (
    AnswerDistribution,
    CandidateHypothesis,
    DiscriminativeCue,
    EvidenceTuple,
    GroundedCue,
    ImageRef,
    KnowledgeSnippet,
    Mask,
    Query,
    Region,
    RetrievedExemplar,
    check_cue_indices,
    check_exemplar_ranks,
    mask_apply,
    mask_support_bbox,
    mask_support_cells,
    merge_candidates,
    normalize_category,
    region_iou,
    whole_region_mask,
)


class TestNormalizeCategory:
    def test_tab_and_case(self):
        assert normalize_category("BMW\ti3") == "bmw i3"

    def test_pads_and_runs(self):
        assert normalize_category("  Snow   Goose \n") == "snow goose"

    def test_empty_raises(self):
        with pytest.raises(EmptyCategory):
            normalize_category("   \t\n ")

    @given(st.text())
    def test_idempotent(self, raw):
        try:
            once = normalize_category(raw)
        except EmptyCategory:
            return
        assert normalize_category(once) == once

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1))
    def test_no_leading_trailing_or_double_space(self, raw):
        try:
            out = normalize_category(raw)
        except EmptyCategory:
            return
        assert out == out.strip()
        assert "  " not in out
        assert out == out.lower()


def cand(cat, conf):
    return CandidateHypothesis(cat, conf)


class TestMergeCandidates:
    def test_worked_example(self):
        a = [cand("x", 0.5), cand("z", 0.4)]
        b = [cand("z", 0.6)]
        out = merge_candidates(a, b, 2)
        assert [(c.category, c.confidence) for c in out] == [("z", 0.6), ("x", 0.5)]

    def test_truncation_and_tie_order(self):
        a = [cand("b", 0.7), cand("a", 0.7), cand("c", 0.9)]
        out = merge_candidates(a, [], 2)
        assert [c.category for c in out] == ["c", "a"]

    def test_max_confidence_union(self):
        out = merge_candidates([cand("x", 0.2)], [cand("x", 0.8)], 5)
        assert out == [cand("x", 0.8)]

    def test_k_max_positive(self):
        with pytest.raises(ValueError):
            merge_candidates([], [], 0)

    cands = st.lists(
        st.tuples(
            st.sampled_from(["ant", "bee", "cat", "dog", "elk", "fox"]),
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        ).map(lambda t: cand(*t)),
        max_size=6,
    )

    @given(cands, cands, st.integers(min_value=1, max_value=8))
    def test_commutative(self, a, b, k):
        assert merge_candidates(a, b, k) == merge_candidates(b, a, k)

    @given(cands, cands, cands)
    def test_associative_without_truncation(self, a, b, c):
        k = 32
        left = merge_candidates(merge_candidates(a, b, k), c, k)
        right = merge_candidates(a, merge_candidates(b, c, k), k)
        assert left == right

    @given(cands, st.integers(min_value=1, max_value=8))
    def test_idempotent_self_merge(self, a, k):
        once = merge_candidates(a, [], k)
        assert merge_candidates(once, once, k) == once

    @given(cands, cands, st.integers(min_value=1, max_value=8))
    def test_sorted_unique_bounded(self, a, b, k):
        out = merge_candidates(a, b, k)
        assert len(out) <= k
        cats = [c.category for c in out]
        assert len(set(cats)) == len(cats)
        confs = [c.confidence for c in out]
        assert confs == sorted(confs, reverse=True)


class TestMask:
    def test_binary_and_continuous_cells_allowed(self):
        Mask([[0.0, 1.0], [0.5, 0.9]], "coarse", (0, 0, 1, 1))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Mask([[1.5]], "coarse", (0, 0, 1, 1))
        with pytest.raises(ValueError):
            Mask([[-0.1]], "coarse", (0, 0, 1, 1))

    def test_rejects_bad_provenance(self):
        with pytest.raises(ValueError):
            Mask([[1.0]], "guessed", (0, 0, 1, 1))

    def test_immutable(self):
        m = Mask([[1.0]], "coarse", (0, 0, 1, 1))
        with pytest.raises(AttributeError):
            m.provenance = "refined"
        with pytest.raises(ValueError):
            m.grid[0, 0] = 0.0

    def test_roundtrip(self):
        m = Mask([[0.0, 1.0], [1.0, 0.0]], "refined", (0.25, 0.25, 0.75, 0.75))
        assert Mask.from_dict(m.to_dict()) == m

    def test_serialization_fields(self):
        m = Mask([[0.0, 1.0], [1.0, 0.0]], "refined", (0.25, 0.25, 0.75, 0.75))
        d = m.to_dict()
        assert d["h"] == 2 and d["w"] == 2
        assert d["cells"] == [0.0, 1.0, 1.0, 0.0]
        assert d["provenance"] == "refined"
        assert d["origin_bbox"] == [0.25, 0.25, 0.75, 0.75]


class TestMaskApply:
    def test_worked_example(self):
        px = [[10.0, 20.0], [30.0, 40.0]]
        m = Mask([[1.0, 0.0], [0.5, 1.0]], "coarse", (0, 0, 1, 1))
        out = mask_apply(px, m)
        assert out.tolist() == [[10.0, 0.0], [15.0, 40.0]]

    def test_channel_broadcast(self):
        px = np.ones((2, 2, 3)) * 8.0
        m = Mask([[1.0, 0.0], [0.0, 1.0]], "coarse", (0, 0, 1, 1))
        out = mask_apply(px, m)
        assert out[0, 0].tolist() == [8.0, 8.0, 8.0]
        assert out[0, 1].tolist() == [0.0, 0.0, 0.0]

    def test_shape_mismatch(self):
        m = Mask([[1.0]], "coarse", (0, 0, 1, 1))
        with pytest.raises(ShapeError):
            mask_apply(np.ones((2, 2)), m)
        with pytest.raises(ShapeError):
            mask_apply(np.ones((4,)), m)

    grids = st.integers(min_value=1, max_value=4).flatmap(
        lambda h: st.integers(min_value=1, max_value=4).flatmap(
            lambda w: st.tuples(
                st.lists(
                    st.lists(st.floats(0, 1, allow_nan=False), min_size=w, max_size=w),
                    min_size=h,
                    max_size=h,
                ),
                st.lists(
                    st.lists(st.floats(-5, 5, allow_nan=False), min_size=w, max_size=w),
                    min_size=h,
                    max_size=h,
                ),
            )
        )
    )

    @given(grids)
    @settings(max_examples=60)
    def test_composition_equals_squared_mask(self, gm):
        grid, px = gm
        m = Mask(grid, "coarse", (0, 0, 1, 1))
        sq = Mask(np.asarray(grid) ** 2, "coarse", (0, 0, 1, 1))
        twice = mask_apply(mask_apply(px, m), m)
        once_sq = mask_apply(px, sq)
        assert np.allclose(twice, once_sq, atol=1e-12)

    def test_binary_mask_preserves_kept_values(self):
        px = np.array([[3.25, -7.5], [0.0, 99.0]])
        m = Mask([[1.0, 0.0], [1.0, 1.0]], "refined", (0, 0, 1, 1))
        out = mask_apply(px, m)
        assert out[0, 0] == 3.25 and out[1, 0] == 0.0 and out[1, 1] == 99.0
        assert out[0, 1] == 0.0


class TestMaskSupport:
    def test_worked_example(self):
        m = Mask([[0.9, 0.6], [0.3, 0.5]], "coarse", (0, 0, 1, 1))
        assert mask_support_cells(m, 0.5) == {(0, 0), (0, 1), (1, 1)}
        bx = mask_support_bbox(m, 0.5)
        assert bx == (0.0, 0.0, 1.0, 1.0)

    def test_threshold_is_relative_to_max(self):
        m = Mask([[0.54, 0.9]], "coarse", (0, 0, 1, 1))
        assert mask_support_cells(m, 0.6) == {(0, 0), (0, 1)}

    def test_two_corner_cells_span_full_grid(self):
        grid = np.zeros((4, 4))
        grid[0, 0], grid[3, 3] = 0.9, 0.6
        m = Mask(grid, "coarse", (0, 0, 1, 1))
        assert mask_support_cells(m, 0.6) == {(0, 0), (3, 3)}
        assert mask_support_bbox(m, 0.6) == (0.0, 0.0, 1.0, 1.0)

    def test_single_cell_extent(self):
        grid = np.zeros((4, 4))
        grid[1, 2] = 0.8
        m = Mask(grid, "coarse", (0, 0, 1, 1))
        assert mask_support_bbox(m, 0.5) == (0.5, 0.25, 0.75, 0.5)

    def test_single_peak_bbox(self):
        m = Mask(np.eye(4), "coarse", (0, 0, 1, 1))
        bx = mask_support_bbox(m, 1.0)
        assert bx == (0.0, 0.0, 1.0, 1.0)
        m2 = Mask([[0.0, 0.0], [0.0, 1.0]], "coarse", (0, 0, 1, 1))
        assert mask_support_bbox(m2, 0.5) == (0.5, 0.5, 1.0, 1.0)

    def test_registered_to_origin_bbox(self):
        m = Mask([[0.0, 1.0], [0.0, 0.0]], "refined", (0.5, 0.0, 1.0, 0.5))
        assert mask_support_bbox(m, 0.5) == (0.75, 0.0, 1.0, 0.25)

    def test_empty_support(self):
        m = Mask([[0.0, 0.0]], "coarse", (0, 0, 1, 1))
        with pytest.raises(EmptySupport):
            mask_support_bbox(m, 0.5)
        assert mask_support_cells(m, 0.5) == set()

    def test_level_range(self):
        m = Mask([[1.0]], "coarse", (0, 0, 1, 1))
        with pytest.raises(ValueError):
            mask_support_bbox(m, 0.0)
        with pytest.raises(ValueError):
            mask_support_bbox(m, 1.5)

    @given(
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=1, max_value=5),
        st.floats(min_value=0.01, max_value=1.0, allow_nan=False),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=80)
    def test_support_inside_origin(self, h, w, level, rng):
        grid = np.array([[rng.random() for _ in range(w)] for _ in range(h)])
        grid[rng.randrange(h), rng.randrange(w)] = 1.0
        ox0, oy0 = rng.random() * 0.4, rng.random() * 0.4
        ox1, oy1 = ox0 + 0.1 + rng.random() * 0.4, oy0 + 0.1 + rng.random() * 0.4
        m = Mask(grid, "coarse", (ox0, oy0, ox1, oy1))
        x0, y0, x1, y1 = mask_support_bbox(m, level)
        assert ox0 - 1e-12 <= x0 < x1 <= ox1 + 1e-12
        assert oy0 - 1e-12 <= y0 < y1 <= oy1 + 1e-12


class TestRegion:
    def test_iou_worked_example(self):
        a = Region((0.0, 0.0, 1.0, 1.0), 1.0)
        b = Region((0.0, 0.05, 1.0, 1.0), 1.0)
        assert math.isclose(region_iou(a, b), 0.95, rel_tol=0, abs_tol=1e-12)

    def test_disjoint_iou_zero(self):
        a = Region((0.0, 0.0, 0.4, 0.4), 1.0)
        b = Region((0.6, 0.6, 1.0, 1.0), 1.0)
        assert region_iou(a, b) == 0.0

    def test_degenerate_bbox_rejected(self):
        with pytest.raises(ValueError):
            Region((0.5, 0.0, 0.5, 1.0), 1.0)
        with pytest.raises(ValueError):
            Region((0.0, 0.0, 1.2, 1.0), 1.0)

    def test_roundtrip(self):
        r = Region((0.1, 0.2, 0.9, 0.8), 0.7, label_hint="bird")
        assert Region.from_dict(r.to_dict()) == r


class TestStructuredTypes:
    def test_query_choice_validation(self):
        with pytest.raises(ValueError):
            Query("q?", choices=("Cat", "cat"))
        with pytest.raises(ValueError):
            Query("q?", choices=("only",))
        q = Query("q?", choices=("cat", "dog"), dimension="object")
        assert Query.from_dict(q.to_dict()) == q

    def test_exemplar_ranks(self):
        img = ImageRef("mem://a", 4, 4)
        ex = [
            RetrievedExemplar(img, "c", "u", 2),
            RetrievedExemplar(img, "c", "u", 1),
        ]
        check_exemplar_ranks(ex)
        with pytest.raises(ValueError):
            check_exemplar_ranks(ex[:1])

    def test_cue_indices(self):
        cues = [DiscriminativeCue(1, "red beak"), DiscriminativeCue(0, "long neck")]
        check_cue_indices(cues)
        with pytest.raises(ValueError):
            check_cue_indices(cues[:1])

    def test_candidate_requires_canonical(self):
        with pytest.raises(ValueError):
            CandidateHypothesis("Snow Goose", 0.5)
        with pytest.raises(EmptyCategory):
            CandidateHypothesis("  ", 0.5)

    def test_evidence_tuple_ordering_enforced(self):
        ent = Region((0, 0, 1, 1), 1.0)
        a, b = cand("a", 0.4), cand("b", 0.9)
        with pytest.raises(ValueError):
            EvidenceTuple(ent, ((a, (), ()), (b, (), ())))
        et = EvidenceTuple(ent, ((b, (), ()), (a, (), ())))
        assert EvidenceTuple.from_dict(et.to_dict()) == et

    def test_evidence_tuple_unique_candidates(self):
        ent = Region((0, 0, 1, 1), 1.0)
        with pytest.raises(ValueError):
            EvidenceTuple(ent, ((cand("a", 0.5), (), ()), (cand("a", 0.4), (), ())))

    def test_evidence_tuple_roundtrip_with_payload(self):
        ent = Region((0, 0, 1, 1), 0.9)
        snip = KnowledgeSnippet("snow goose", "white body, black wingtips", "kb://1")
        g = GroundedCue(
            DiscriminativeCue(0, "black wingtips", "colour"),
            Mask([[0.0, 1.0]], "refined", (0.0, 0.0, 1.0, 0.5)),
            0.83,
        )
        et = EvidenceTuple(ent, ((cand("snow goose", 0.9), (snip,), (g,)),))
        assert EvidenceTuple.from_dict(et.to_dict()) == et

    def test_answer_distribution_validation(self):
        d = AnswerDistribution({"a": 0.7, "b": 0.3}, "a", 0.7)
        assert AnswerDistribution.from_dict(d.to_dict()) == d
        with pytest.raises(ValueError):
            AnswerDistribution({"a": 0.7, "b": 0.3}, "b", 0.3)
        with pytest.raises(ValueError):
            AnswerDistribution({"a": 0.7}, "a", 0.6)
        with pytest.raises(ValueError):
            AnswerDistribution({"a": 1.3}, "a", 1.3)

    def test_whole_region_mask(self):
        m = whole_region_mask((0.2, 0.2, 0.8, 0.8))
        assert m.shape == (1, 1) and m.grid[0, 0] == 1.0
        assert mask_support_bbox(m, 1.0) == (0.2, 0.2, 0.8, 0.8)
