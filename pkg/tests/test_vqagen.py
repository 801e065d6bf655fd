import math
from collections import Counter

from bevkit.annotator import annotate_scene
from bevkit.scenemodel import Area, AreaType, Vec2, VehicleState, VehicleTrack
from bevkit.synth import SynthSpec, synth_scene
from bevkit.vqagen import (
    ANSWER_VOCABULARY,
    NormBBox,
    QType,
    balance_dataset,
    bbox_iou,
    dataset_stats,
    gen_questions,
    item_from_dict,
    item_to_dict,
    lane_bbox,
    load_templates,
    orientation_label,
    read_qa_jsonl,
    split_dataset,
    write_qa_jsonl,
)

from conftest import (
    build_scene,
    make_raster_ref,
    rect_polygon,
    rederive_answer,
    straight_lane,
    straight_states,
)


def _gen_for_scene(scene, timesteps=(0, 25, 50), rate=6.0, seed=0, vehicles=None):
    records = annotate_scene(scene)
    vids = vehicles or [tr.vehicle_id for tr in scene.tracks]
    have = {(r.vehicle_id, r.timestep) for r in records}
    refs = [
        make_raster_ref(scene, vid, t) for vid in vids for t in timesteps if (vid, t) in have
    ]
    return records, refs, gen_questions(scene, records, refs, rate=rate, seed=seed)


class TestTemplates:
    def test_six_or_more_per_type(self):
        templates = load_templates()
        for qtype in QType:
            assert len(templates[qtype]) >= 6

    def test_orientation_templates_have_rank(self):
        templates = load_templates()
        ranks = {t.rank for t in templates[QType.ORIENTATION]}
        assert ranks == {"closest", "farthest"}


class TestNormBBox:
    def test_iou_zero_when_touching(self):
        a = NormBBox(0.10, 0.10, 0.50, 0.50)
        b = NormBBox(0.50, 0.10, 0.90, 0.50)
        assert bbox_iou(a, b) == 0.0

    def test_iou_positive_when_overlapping(self):
        a = NormBBox(0.10, 0.10, 0.60, 0.60)
        b = NormBBox(0.50, 0.10, 0.90, 0.50)
        assert bbox_iou(a, b) > 0.0

    def test_str_two_decimals(self):
        assert str(NormBBox(0.1, 0.2, 0.35, 1.0)) == "[0.10, 0.20, 0.35, 1.00]"


class TestOrientationLabel:
    def test_cardinal_bins(self):
        assert orientation_label(0.0) == "same_direction"
        assert orientation_label(math.pi) == "oncoming"
        assert orientation_label(math.pi / 2) == "perpendicular_left"
        assert orientation_label(-math.pi / 2) == "perpendicular_right"

    def test_boundaries(self):
        assert orientation_label(math.radians(45.0)) == "same_direction"
        assert orientation_label(math.radians(135.0)) == "oncoming"
        assert orientation_label(math.radians(46.0)) == "perpendicular_left"
        assert orientation_label(math.radians(-46.0)) == "perpendicular_right"


class TestGenQuestions:
    def test_single_lane_scene_has_no_location(self, single_lane_scene):
        _, _, items = _gen_for_scene(single_lane_scene, timesteps=(0, 20), rate=6.0)
        assert items
        assert all(it.qtype is not QType.LOCATION for it in items)
        assert all(it.qtype is not QType.NAVIGATION for it in items)

    def test_lone_ego_existence_is_no(self, single_lane_scene):
        _, _, items = _gen_for_scene(single_lane_scene, rate=6.0, seed=1)
        existence = [it for it in items if it.qtype is QType.EXISTENCE]
        assert existence
        assert all(it.answer == "no" for it in existence)

    def test_oncoming_car_orientation(self):
        lane = straight_lane("L0", width=6.0)
        area = Area(id="r", polygon=rect_polygon(-50, -3, 50, 3), area_type=AreaType.REGULAR_ROAD)
        ego = VehicleTrack(vehicle_id="ego", states=straight_states(61, x0=-20.0, v=3.0))
        oncoming = VehicleTrack(
            vehicle_id="onc",
            states=tuple(
                (t, VehicleState(position=Vec2(20.0 - 0.3 * t, 0.8), speed=3.0, yaw=math.pi))
                for t in range(61)
            ),
        )
        scene = build_scene([lane], [area], [ego, oncoming])
        _, _, items = _gen_for_scene(scene, timesteps=(0, 10, 20, 30), rate=6.0, vehicles=["ego"])
        oriented = [
            it
            for it in items
            if it.qtype is QType.ORIENTATION and it.meta.get("direction") == "front"
        ]
        assert oriented
        assert all(it.answer == "oncoming" for it in oriented)

    def test_answers_in_vocabulary(self):
        scene, _ = synth_scene(SynthSpec("four_way", 6), seed=3)
        _, _, items = _gen_for_scene(scene, seed=5)
        for it in items:
            assert it.answer in ANSWER_VOCABULARY[it.qtype]

    def test_choice_pairs_iou_zero_and_in_unit_square(self):
        scene, _ = synth_scene(SynthSpec("four_way", 6), seed=3)
        _, _, items = _gen_for_scene(scene, seed=5)
        boxed = [it for it in items if it.choices is not None]
        assert boxed
        for it in boxed:
            a, b = it.choices["A"], it.choices["B"]
            assert bbox_iou(a, b) == 0.0
            for box in (a, b):
                assert 0.0 <= box.x0 < box.x1 <= 1.0
                assert 0.0 <= box.y0 < box.y1 <= 1.0

    def test_navigation_prompt_embeds_maneuver(self):
        scene, _ = synth_scene(SynthSpec("four_way", 6), seed=3)
        records, refs, items = _gen_for_scene(scene, seed=5)
        rec_by = {(r.vehicle_id, r.timestep): r for r in records}
        nav = [it for it in items if it.qtype is QType.NAVIGATION]
        assert nav
        from bevkit.motion import MANEUVER_PHRASES

        for it in nav:
            phrase = MANEUVER_PHRASES[rec_by[(it.ego_id, it.timestep)].trajectory_category]
            assert phrase in it.question

    def test_deterministic_in_seed(self):
        scene, _ = synth_scene(SynthSpec("t_junction", 4), seed=9)
        r1 = _gen_for_scene(scene, seed=42)[2]
        r2 = _gen_for_scene(scene, seed=42)[2]
        assert [item_to_dict(i) for i in r1] == [item_to_dict(i) for i in r2]
        r3 = _gen_for_scene(scene, seed=43)[2]
        assert [item_to_dict(i) for i in r1] != [item_to_dict(i) for i in r3]

    def test_soundness_rederive_small(self):
        scene, _ = synth_scene(SynthSpec("four_way", 8), seed=15)
        records, refs, items = _gen_for_scene(scene, seed=8)
        ref_by_image = {r.image: r for r in refs}
        assert len(items) > 40
        for it in items:
            assert rederive_answer(it, scene, ref_by_image[it.image_ref]) == it.answer

    def test_mean_rate_near_default(self):
        scene, _ = synth_scene(SynthSpec("four_way", 10), seed=1)
        records, refs, items = _gen_for_scene(scene, rate=5.44, seed=2)
        assert 4.0 <= len(items) / len(refs) <= 6.0


class TestLaneBBox:
    def test_visible_lane_has_box(self):
        scene, _ = synth_scene(SynthSpec("straight_road", 1), seed=0)
        ref = make_raster_ref(scene, "veh_00", 0)
        rec = annotate_scene(scene)[0]
        box = lane_bbox(scene.map.lanes[rec.current_lane].boundary, ref)
        assert box is not None
        assert 0.0 <= box.x0 < box.x1 <= 1.0

    def test_far_away_lane_invisible(self):
        lane_far = straight_lane("far", y=500.0)
        scene, _ = synth_scene(SynthSpec("straight_road", 1), seed=0)
        ref = make_raster_ref(scene, "veh_00", 0)
        assert lane_bbox(lane_far.boundary, ref) is None


class TestBalance:
    def _items(self, spec):
        # spec: {(qtype, answer): count}
        out = []
        k = 0
        for (qtype, answer), count in spec.items():
            for _ in range(count):
                out.append(
                    item_from_dict(
                        {
                            "qa_id": f"q{k}",
                            "image": f"img{k % 7}.png",
                            "qtype": qtype,
                            "template_id": "t",
                            "question": "?",
                            "answer": answer,
                            "scene_id": "s",
                            "ego_id": "e",
                            "timestep": 0,
                        }
                    )
                )
                k += 1
        return out

    def test_majority_cut_to_three_times_min(self):
        items = self._items({("lane_type", "straight"): 1000, ("lane_type", "left_turn"): 100})
        out = balance_dataset(items, factor=3.0, seed=0)
        counts = Counter(it.answer for it in out)
        assert counts["straight"] == 300
        assert counts["left_turn"] == 100

    def test_already_balanced_unchanged(self):
        items = self._items({("existence", "yes"): 50, ("existence", "no"): 60})
        out = balance_dataset(items, factor=3.0, seed=0)
        assert out == items

    def test_order_preserved(self):
        items = self._items({("lane_type", "straight"): 200, ("lane_type", "left_turn"): 10})
        out = balance_dataset(items, factor=3.0, seed=1)
        ids = [it.qa_id for it in out]
        original_order = [it.qa_id for it in items if it.qa_id in set(ids)]
        assert ids == original_order

    def test_never_increases_and_respects_cap(self):
        scene, _ = synth_scene(SynthSpec("four_way", 8), seed=15)
        _, _, items = _gen_for_scene(scene, seed=8)
        before = dataset_stats(items).answer_class_counts
        out = balance_dataset(items, factor=3.0, seed=4)
        after = dataset_stats(out).answer_class_counts
        for qtype, classes in after.items():
            m = min(classes.values())
            assert max(classes.values()) <= 3 * m or max(classes.values()) <= math.ceil(
                3.0 * min(before[qtype].values())
            )
            for cls, n in classes.items():
                assert n <= before[qtype][cls]

    def test_deterministic(self):
        items = self._items({("lane_type", "straight"): 500, ("lane_type", "left_turn"): 50})
        a = [it.qa_id for it in balance_dataset(items, factor=3.0, seed=9)]
        b = [it.qa_id for it in balance_dataset(items, factor=3.0, seed=9)]
        assert a == b


class TestSplit:
    def test_zero_fraction_empty_test(self):
        scene, _ = synth_scene(SynthSpec("straight_road", 4), seed=2)
        _, _, items = _gen_for_scene(scene, seed=1)
        train, test = split_dataset(items, test_fraction=0.0, seed=0)
        assert test == [] and train == list(items)

    def test_no_image_leakage(self):
        scene, _ = synth_scene(SynthSpec("four_way", 10), seed=2)
        _, _, items = _gen_for_scene(scene, seed=1)
        train, test = split_dataset(items, test_fraction=0.3, seed=3)
        assert {it.image_ref for it in train}.isdisjoint({it.image_ref for it in test})
        assert len(train) + len(test) == len(items)

    def test_fraction_realized(self):
        items = []
        for s in range(40):
            scene, _ = synth_scene(SynthSpec("straight_road", 5), seed=s)
            items.extend(_gen_for_scene(scene, seed=s)[2])
        train, test = split_dataset(items, test_fraction=0.157, seed=5)
        frac = len(test) / len(items)
        assert abs(frac - 0.157) <= 0.02

    def test_deterministic(self):
        scene, _ = synth_scene(SynthSpec("four_way", 10), seed=2)
        _, _, items = _gen_for_scene(scene, seed=1)
        a = split_dataset(items, test_fraction=0.25, seed=7)
        b = split_dataset(items, test_fraction=0.25, seed=7)
        assert [i.qa_id for i in a[1]] == [i.qa_id for i in b[1]]


class TestStats:
    def test_empty(self):
        report = dataset_stats([])
        assert report.total_questions == 0
        assert report.image_count == 0
        assert report.questions_per_image == 0.0

    def test_hand_built_counts(self):
        rows = [
            ("area_type", "intersection", "img0"),
            ("area_type", "regular_road", "img0"),
            ("existence", "yes", "img0"),
            ("existence", "no", "img1"),
            ("existence", "no", "img1"),
            ("lane_type", "straight", "img1"),
        ]
        items = [
            item_from_dict(
                {
                    "qa_id": f"q{i}",
                    "image": img,
                    "qtype": qt,
                    "template_id": "t",
                    "question": "?",
                    "answer": ans,
                    "scene_id": "s",
                    "ego_id": "e",
                    "timestep": 0,
                }
            )
            for i, (qt, ans, img) in enumerate(rows)
        ]
        report = dataset_stats(items)
        assert report.total_questions == 6
        assert report.image_count == 2
        assert report.questions_per_image == 3.0
        assert report.question_type_counts == {"area_type": 2, "existence": 3, "lane_type": 1}
        assert report.answer_class_counts["existence"] == {"no": 2, "yes": 1}


class TestJsonl:
    def test_round_trip(self, tmp_path):
        scene, _ = synth_scene(SynthSpec("four_way", 4), seed=6)
        _, _, items = _gen_for_scene(scene, seed=2)
        p = tmp_path / "qa.jsonl"
        write_qa_jsonl(items, p)
        loaded = read_qa_jsonl(p)
        assert len(loaded) == len(items)
        for a, b in zip(loaded, items):
            assert a.qa_id == b.qa_id
            assert a.answer == b.answer
            assert a.choices == b.choices
