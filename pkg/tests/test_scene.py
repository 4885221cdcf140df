import json
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lenstext import scene
from lenstext.evaluation import BBox
from lenstext.imgcore import save_image
from lenstext.ocr import match_glyph
from lenstext.scene import (ALPHABET, AtlasError, DatasetError, SceneSpec, compose_dataset, compose_from_crops,
                            glyph_layout, ink_box, read_dataset, render_word, synthesize_scene, write_dataset)


def _write_atlas(tmp_path, glyphs, order=ALPHABET, drop=None, blank=None):
    cw, ch = 62, glyphs.cell_height
    chars = [c for c in order if c != drop]
    strip = np.zeros((ch, cw * len(chars)))
    for i, c in enumerate(chars):
        if c != blank:
            g = glyphs.glyphs[c]
            strip[:, i * cw : i * cw + g.shape[1]] = g
    save_image(strip, tmp_path / "atlas.pgm")
    meta = {"cell_width": cw, "cell_height": ch, "order": "".join(chars) if drop is None else order}
    (tmp_path / "atlas.json").write_text(json.dumps(meta))
    return tmp_path / "atlas.pgm", tmp_path / "atlas.json"


# -- glyph atlas --------------------------------------------------------------------


def test_default_atlas(glyphs):
    assert len(glyphs.glyphs) == 36 and glyphs.cell_height == 40
    assert set(glyphs.glyphs) == set(ALPHABET)
    for g in glyphs.glyphs.values():
        assert g.shape[0] == 40 and g.max() > 0.5


def test_atlas_round_trip_from_files(tmp_path, glyphs):
    loaded = scene.load_glyph_atlas(*_write_atlas(tmp_path, glyphs))
    for c in ALPHABET:
        assert np.max(np.abs(loaded.glyphs[c] - glyphs.glyphs[c])) <= 0.5 / 255 + 1e-12


def test_atlas_with_35_cells(tmp_path, glyphs):
    with pytest.raises(AtlasError, match="glyph count mismatch"):
        scene.load_glyph_atlas(*_write_atlas(tmp_path, glyphs, drop="Q"))


def test_atlas_missing_character_in_order(tmp_path, glyphs):
    img, meta = _write_atlas(tmp_path, glyphs)
    m = json.loads(meta.read_text())
    m["order"] = m["order"].replace("Q", "A")
    meta.write_text(json.dumps(m))
    with pytest.raises(AtlasError, match="missing character"):
        scene.load_glyph_atlas(img, meta)


def test_atlas_empty_cell(tmp_path, glyphs):
    with pytest.raises(AtlasError, match="empty glyph cell"):
        scene.load_glyph_atlas(*_write_atlas(tmp_path, glyphs, blank="K"))


def test_every_glyph_matches_itself(glyphs):
    for c in ALPHABET:
        res = match_glyph(render_word(glyphs, c, glyphs.cell_height), glyphs)
        assert res.character == c and res.score >= 0.99


# -- render_word ---------------------------------------------------------------------


def test_render_single_glyph_at_cell_height(glyphs):
    img = render_word(glyphs, "A", 40)
    assert img.shape == (40, glyphs.widths["A"])


def test_render_layout_arithmetic(glyphs):
    img = render_word(glyphs, "AB", 40)
    assert img.shape[1] == glyphs.widths["A"] + round(0.15 * 40) + glyphs.widths["B"]


def test_render_half_scale_widths(glyphs):
    img = render_word(glyphs, "HELLO", 20)
    assert img.shape[0] == 20
    for c, (x0, x1) in zip("HELLO", glyph_layout(glyphs, "HELLO", 20)):
        assert abs((x1 - x0) - glyphs.widths[c] / 2) <= 1


def test_render_rejects_bad_text(glyphs):
    with pytest.raises(ValueError):
        render_word(glyphs, "", 40)
    with pytest.raises(ValueError):
        render_word(glyphs, "a", 40)


def test_render_ink_range(glyphs):
    img = render_word(glyphs, "W0RD", 30)
    assert img.min() == 0.0 and 0 < img.max() <= 1.0


# -- synthesize_scene ----------------------------------------------------------------


def test_synthesis_is_deterministic(glyphs):
    spec = SceneSpec(seed=99)
    a, anns_a = synthesize_scene(glyphs, spec)
    b, anns_b = synthesize_scene(glyphs, spec)
    np.testing.assert_array_equal(a, b)
    assert anns_a == anns_b


def test_forced_single_one_letter_word(glyphs):
    spec = SceneSpec(words_min=1, words_max=1, len_min=1, len_max=1, seed=4)
    _, anns = synthesize_scene(glyphs, spec)
    assert len(anns) == 1 and len(anns[0].text) == 1


def _check_scene(img, anns, spec):
    covered = np.zeros(img.shape, dtype=bool)
    for a in anns:
        b = a.bbox
        assert b.x0 >= spec.margin and b.y0 >= spec.margin
        assert b.x1 <= spec.canvas_width - spec.margin and b.y1 <= spec.canvas_height - spec.margin
        assert a.text and set(a.text) <= set(ALPHABET)
        assert spec.len_min <= len(a.text) <= spec.len_max
        # annotation equals the exact ink rectangle of its word
        assert ink_box(img[b.y0 : b.y1, b.x0 : b.x1]) == BBox(0, 0, b.width, b.height)
        covered[b.y0 : b.y1, b.x0 : b.x1] = True
    assert not np.any(img[~covered] != 0)
    for i in range(len(anns)):
        for j in range(i + 1, len(anns)):
            assert anns[i].bbox.intersection_area(anns[j].bbox) == 0
            assert anns[i].bbox.dilate(spec.margin, spec.margin).intersection_area(anns[j].bbox) == 0


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 2**63 - 1), size=st.sampled_from(scene.TEXT_SIZES),
       words_max=st.integers(1, 8))
def test_scene_invariants(glyphs, seed, size, words_max):
    spec = SceneSpec(char_height=size, words_max=words_max, seed=seed)
    img, anns = synthesize_scene(glyphs, spec)
    assert img.shape == (243, 324)
    assert len(anns) <= words_max
    _check_scene(img, anns, spec)


def test_unplaceable_scene_is_blank(glyphs, caplog):
    spec = SceneSpec(canvas_width=40, canvas_height=60, char_height=40, margin=4, len_min=5, len_max=5, seed=1)
    img, anns = synthesize_scene(glyphs, spec)
    assert anns == [] and not img.any()
    assert "no word could be placed" in caplog.text


def test_character_frequencies_are_uniform():
    rng = np.random.default_rng(2024)
    counts = Counter()
    total = 0
    while total < 100_000:
        w = scene.random_word(rng, 1, 10)
        counts.update(w)
        total += len(w)
    p = 1 / 36
    sigma = np.sqrt(total * p * (1 - p))
    for c in ALPHABET:
        assert abs(counts[c] - total * p) <= 5 * sigma


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(words_min=3, words_max=2)
    with pytest.raises(ValueError):
        SceneSpec(len_min=0)
    with pytest.raises(ValueError):
        SceneSpec(canvas_height=40, char_height=40, margin=4)


def test_derived_seeds_are_order_independent(glyphs):
    spec = SceneSpec(seed=5)
    batch = scene.synthesize_dataset(glyphs, spec, 4)
    third = synthesize_scene(glyphs, replace(spec, seed=scene.derive_seed(5, 2)))
    np.testing.assert_array_equal(batch[2][0], third[0])


# -- composites ------------------------------------------------------------------------


def test_single_crop_placement():
    crop = np.full((20, 30), 0.8)
    img, anns, used = compose_from_crops([(crop, "abc")], seed=3)
    assert used == [0] and len(anns) == 1
    assert (anns[0].bbox.width, anns[0].bbox.height) == (30, 20)
    assert anns[0].text == "ABC"
    b = anns[0].bbox
    np.testing.assert_allclose(img[b.y0 : b.y1, b.x0 : b.x1], 0.8)


def test_tall_crop_is_resized_to_50():
    crop = np.full((100, 60), 1.0)
    _, anns, _ = compose_from_crops([(crop, "X")], seed=0)
    assert (anns[0].bbox.height, anns[0].bbox.width) == (50, 30)


def test_crop_taller_than_canvas_rejected():
    with pytest.raises(ValueError):
        compose_from_crops([(np.ones((300, 10)), "X")])
    with pytest.raises(ValueError):
        compose_from_crops([])


def test_twenty_crops_do_not_overlap():
    crops = [(np.full((50, 100), 0.5), f"W{k}") for k in range(20)]
    _, anns, used = compose_from_crops(crops, seed=11)
    assert len(used) >= 1 and len(set(used)) == len(used)
    for i in range(len(anns)):
        for j in range(i + 1, len(anns)):
            assert anns[i].bbox.intersection_area(anns[j].bbox) == 0


def test_compose_dataset_uses_every_crop_once():
    crops = [(np.full((50, 100), 0.5), f"W{k}") for k in range(20)]
    items = compose_dataset(crops, seed=2)
    texts = sorted(a.text for _, anns in items for a in anns)
    assert texts == sorted(f"W{k}" for k in range(20))


def test_read_crops_filters(tmp_path):
    save_image(np.ones((40, 80)), tmp_path / "a.png")
    save_image(np.ones((20, 80)), tmp_path / "b.png")
    save_image(np.ones((40, 80)), tmp_path / "c.png")
    lines = [{"image": "a.png", "text": "Hello"}, {"image": "b.png", "text": "small"},
             {"image": "c.png", "text": "it's"}]
    (tmp_path / "labels.jsonl").write_text("".join(json.dumps(r) + "\n" for r in lines))
    crops = scene.read_crops(tmp_path)
    assert [t for _, t in crops] == ["Hello"]


# -- dataset I/O --------------------------------------------------------------------------


def test_dataset_round_trip(tmp_path, glyphs):
    items = scene.synthesize_dataset(glyphs, SceneSpec(seed=8), 3)
    names = write_dataset(tmp_path / "ds", items)
    assert names == ["00000.pgm", "00001.pgm", "00002.pgm"]
    back = read_dataset(tmp_path / "ds")
    for (img, anns), (img2, anns2) in zip(items, back):
        assert anns == anns2
        assert np.max(np.abs(img - img2)) <= 0.5 / 255 + 1e-12


def test_annotation_schema(tmp_path, glyphs):
    items = scene.synthesize_dataset(glyphs, SceneSpec(seed=8), 1)
    write_dataset(tmp_path, items)
    rec = json.loads((tmp_path / "annotations.jsonl").read_text().splitlines()[0])
    assert rec["image"] == "00000.pgm"
    assert set(rec["words"][0]) == {"x0", "y0", "x1", "y1", "text"}


def test_empty_dataset(tmp_path):
    write_dataset(tmp_path / "e", [])
    assert read_dataset(tmp_path / "e") == []


def test_malformed_line_reports_number(tmp_path, glyphs):
    write_dataset(tmp_path, scene.synthesize_dataset(glyphs, SceneSpec(seed=1), 2))
    path = tmp_path / "annotations.jsonl"
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + "\n{not json\n")
    with pytest.raises(DatasetError, match="line 2"):
        read_dataset(tmp_path)


def test_missing_image_reported(tmp_path, glyphs):
    write_dataset(tmp_path, scene.synthesize_dataset(glyphs, SceneSpec(seed=1), 2))
    (tmp_path / "00001.pgm").unlink()
    with pytest.raises(DatasetError, match="00001.pgm"):
        read_dataset(tmp_path)


def test_dataset_bytes_are_reproducible(tmp_path, glyphs):
    for d in ("a", "b"):
        write_dataset(tmp_path / d, scene.synthesize_dataset(glyphs, SceneSpec(seed=21), 100), meta={"seed": 21})
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
