"""Label parsing, tiling, clipping, remapping, merging and result-file round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialdet.dota_io import (
    DOTA_CLASSES,
    AnnotationRecord,
    DetectionRecord,
    FormatError,
    PatchSpec,
    clip_annotations_to_patch,
    crop_patches,
    format_annotation,
    hbb_to_quad,
    merge_and_nms,
    parse_annotation,
    quad_to_hbb,
    quantize,
    read_manifest,
    read_results,
    remap_detections,
    write_results,
)

LABEL_TEXT = """imagesource:GoogleEarth
gsd:0.146343590398
10 10 50 10 50 40 10 40 plane 0
60 5 90 5 90 30 60 30 ship 1
1 2 3 4 5 6 7 8 spaceship 0
1 2 3 plane
"""


class TestParsing:
    def test_records_and_diagnostics(self):
        records, problems = parse_annotation(LABEL_TEXT)
        assert [r.category for r in records] == ["plane", "ship"]
        assert [r.difficult for r in records] == [False, True]
        assert records[0].hbb == (10.0, 10.0, 50.0, 40.0)
        assert len(problems) == 2 and "unknown category" in problems[0] and problems[1].startswith("line 6")

    def test_strict_raises(self):
        with pytest.raises(FormatError):
            parse_annotation(LABEL_TEXT, strict=True)

    def test_format_round_trip(self):
        records, _ = parse_annotation(LABEL_TEXT)
        again, problems = parse_annotation(format_annotation(records))
        assert again == records and not problems

    def test_quad_to_hbb_of_rotated_quad(self):
        assert quad_to_hbb((5, 0, 10, 5, 5, 10, 0, 5)) == (0, 0, 10, 10)
        assert quad_to_hbb(hbb_to_quad((1, 2, 3, 4))) == (1, 2, 3, 4)

    def test_record_validation(self):
        with pytest.raises(ValueError):
            AnnotationRecord((0,) * 6, "plane")
        with pytest.raises(ValueError):
            DetectionRecord("a", "plane", 1.5, (0, 0, 1, 1))
        with pytest.raises(ValueError):
            DetectionRecord("a", "plane", 0.5, (2, 0, 1, 1))

    def test_fifteen_classes(self):
        assert len(DOTA_CLASSES) == 15 and len(set(DOTA_CLASSES)) == 15


class TestTiling:
    def test_single_window(self):
        (p,) = crop_patches(1024, 1024)
        assert (p.x0, p.y0, p.padded) == (0, 0, False)

    def test_four_patches(self):
        assert sorted((p.x0, p.y0) for p in crop_patches(1525, 1525)) == [(0, 0), (0, 501), (501, 0), (501, 501)]

    def test_small_scene_padded(self):
        (p,) = crop_patches(300, 2000)[:1]
        assert p.padded and p.width == 1024

    @given(w=st.integers(100, 4000), h=st.integers(100, 4000))
    @settings(max_examples=60, deadline=None)
    def test_coverage_and_order(self, w, h):
        patches = crop_patches(w, h)
        xs = sorted({p.x0 for p in patches})
        ys = sorted({p.y0 for p in patches})
        for starts, length in ((xs, w), (ys, h)):
            assert starts[0] == 0
            assert starts[-1] + 1024 >= length
            assert all(b - a <= 524 for a, b in zip(starts, starts[1:]))
        assert [(p.y0, p.x0) for p in patches] == sorted((p.y0, p.x0) for p in patches)

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            crop_patches(2000, 2000, window=512, overlap=512)

    def test_patch_name(self):
        assert PatchSpec("P0001", 524, 0).name == "P0001__1__524___0"


class TestClipAndRemap:
    def test_clip_keeps_visible_fraction(self):
        rec = AnnotationRecord(hbb_to_quad((1000, 10, 1080, 60)), "plane")  # 30% inside
        patch = PatchSpec("s", 0, 0)
        assert clip_annotations_to_patch([rec], patch, min_visible=0.25)[0].hbb == (1000, 10, 1024, 60)
        assert clip_annotations_to_patch([rec], patch, min_visible=0.5) == []

    def test_round_trip(self, rng):
        patch = PatchSpec("s", 501, 1002)
        box = (600.0, 1100.0, 700.0, 1200.5)
        local = clip_annotations_to_patch([AnnotationRecord(hbb_to_quad(box), "ship")], patch)[0]
        back = remap_detections([DetectionRecord(patch.name, "ship", 0.9, local.hbb)], patch, 3000, 3000)
        assert back[0].hbb == box and back[0].image_id == "s"

    def test_remap_clips_to_scene(self):
        patch = PatchSpec("s", 976, 0)
        (d,) = remap_detections([DetectionRecord("p", "ship", 0.9, (1000, 5, 1100, 10))], patch, 2000, 2000)
        assert d.hbb == (1976, 5, 2000, 10)


class TestMergeAndFiles:
    def test_merge_suppresses_duplicates_per_class(self):
        dets = [DetectionRecord("s", "ship", 0.9, (0, 0, 10, 10)), DetectionRecord("s", "ship", 0.8, (1, 0, 10, 10)),
                DetectionRecord("s", "plane", 0.7, (1, 0, 10, 10)), DetectionRecord("t", "ship", 0.6, (1, 0, 10, 10))]
        kept = merge_and_nms(dets, 0.5)
        assert sorted((d.image_id, d.category, d.score) for d in kept) == [("s", "plane", 0.7), ("s", "ship", 0.9), ("t", "ship", 0.6)]

    def test_results_round_trip(self, tmp_path, rng):
        dets = [DetectionRecord(f"img{i % 3}", DOTA_CLASSES[i % 15], float(rng.uniform()),
                                tuple(float(v) for v in np.sort(rng.uniform(0, 1000, 4)).reshape(2, 2).T.ravel()))
                for i in range(40)]
        paths = write_results(dets, tmp_path)
        assert len(paths) == 15
        back = read_results(tmp_path)
        assert sorted(back, key=repr) == sorted((quantize(d) for d in dets), key=repr)

    def test_unknown_class_file_rejected(self, tmp_path):
        (tmp_path / "Task2_spaceship.txt").write_text("")
        with pytest.raises(FormatError):
            read_results(tmp_path)

    def test_bad_result_line(self, tmp_path):
        (tmp_path / "Task2_plane.txt").write_text("img 0.5 1 2 3\n")
        with pytest.raises(FormatError, match="Task2_plane.txt:1"):
            read_results(tmp_path)

    @pytest.mark.parametrize("name,text", [("m.json", '{"a": [100, 200]}'), ("m.txt", "# scenes\na 100 200\n")])
    def test_manifest_formats(self, tmp_path, name, text):
        (tmp_path / name).write_text(text)
        assert read_manifest(tmp_path / name) == {"a": (100, 200)}
