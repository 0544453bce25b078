"""Renderer determinism, triplet construction rules, and on-disk round trips."""

import json
from pathlib import Path

import numpy as np
import pytest

from farnet.data import (
    ATTRIBUTES,
    DataError,
    SceneSpec,
    dataset_from_memory,
    fnv1a64,
    foreground_mask,
    generate_dataset,
    load_dataset,
    modification_tokens,
    read_ppm,
    render,
    save_dataset,
    split_sizes,
    vocabulary,
    write_ppm,
)

SPEC = SceneSpec(shape="circle", color="red", size="large",
                 position="center", background="black")


# ---------------------------------------------------------------------------
# rendering


def test_render_is_deterministic_bitwise():
    a = render(SPEC, 32)
    b = render(SPEC, 32)
    assert np.array_equal(a, b)
    assert a.tobytes() == b.tobytes()


def test_color_edit_changes_only_foreground_pixels():
    red = render(SPEC, 32)
    blue = render(SPEC.with_attribute("color", "blue"), 32)
    mask = foreground_mask(SPEC, 32)
    assert np.array_equal(red[~mask], blue[~mask])
    assert not np.array_equal(red[mask], blue[mask])


def test_corner_pixel_is_background_color():
    for bg, value in (("black", (0, 0, 0)), ("gray", (105, 105, 105))):
        img = render(SPEC.with_attribute("background", bg), 32)
        assert tuple(img[0, 0]) == value
        assert tuple(img[-1, -1]) == value


def test_render_rejects_unsupported_size():
    with pytest.raises(DataError):
        render(SPEC, 4)


def test_every_spec_combination_renders_with_nonempty_foreground():
    for shape in ATTRIBUTES["shape"]:
        for position in ATTRIBUTES["position"]:
            for size in ATTRIBUTES["size"]:
                spec = SceneSpec(shape=shape, color="green", size=size,
                                 position=position, background="gray")
                mask = foreground_mask(spec, 32)
                assert mask.any()
                assert not mask.all()


def test_ppm_roundtrip():
    img = render(SPEC, 16)
    path = Path("/tmp/farnet_test_roundtrip.ppm")
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img)
    path.unlink()


def test_fnv1a64_known_vector():
    # published reference values for the 64-bit FNV-1a function
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


# ---------------------------------------------------------------------------
# vocabulary and templating


def test_vocabulary_ids_are_contiguous_from_zero():
    vocab = vocabulary()
    assert sorted(vocab.values()) == list(range(len(vocab)))


def test_modification_tokens_template():
    assert modification_tokens("color", "red") == ("make", "the", "color", "red")
    with pytest.raises(DataError):
        modification_tokens("color", "circle")


def test_all_template_tokens_are_in_vocabulary():
    vocab = vocabulary()
    for attr, values in ATTRIBUTES.items():
        for value in values:
            for tok in modification_tokens(attr, value):
                assert tok in vocab


# ---------------------------------------------------------------------------
# generation


def test_generation_is_pure_function_of_inputs():
    m1, i1 = generate_dataset(7, 60, (0.8, 0.1, 0.1), 16)
    m2, i2 = generate_dataset(7, 60, (0.8, 0.1, 0.1), 16)
    assert json.dumps(_payload(m1)) == json.dumps(_payload(m2))
    assert all(np.array_equal(i1[k], i2[k]) for k in i1)
    m3, _ = generate_dataset(8, 60, (0.8, 0.1, 0.1), 16)
    assert json.dumps(_payload(m1)) != json.dumps(_payload(m3))


def _payload(manifest):
    from farnet.data import _manifest_payload
    return _manifest_payload(manifest)


def test_split_sizes_are_exact():
    assert split_sizes(100, (0.8, 0.1, 0.1)) == (80, 10, 10)
    assert split_sizes(640, (0.8, 0.1, 0.1)) == (512, 64, 64)


def test_split_ratio_validation():
    with pytest.raises(DataError):
        split_sizes(100, (0.8, 0.1, 0.2))


def test_minimum_triplet_count_enforced():
    with pytest.raises(DataError):
        generate_dataset(1, 9, (0.8, 0.1, 0.1), 16)


def test_every_triplet_is_a_single_attribute_edit():
    manifest, images = generate_dataset(11, 150, (0.8, 0.1, 0.1), 16)
    ds = dataset_from_memory(manifest, images)
    for t in manifest.triplets:
        ref = ds.specs[t.reference_id]
        tgt = ds.specs[t.target_id]
        diffs = [a for a in ATTRIBUTES if getattr(ref, a) != getattr(tgt, a)]
        assert diffs == [t.attribute]
        assert getattr(tgt, t.attribute) == t.value
        # the value token names the target state, never the reference state
        assert t.value != getattr(ref, t.attribute)
        assert t.tokens == modification_tokens(t.attribute, t.value)


def test_gallery_has_no_duplicate_specs_and_groups_partition_it():
    manifest, _ = generate_dataset(13, 200, (0.8, 0.1, 0.1), 16)
    specs = [tuple(sorted(e["spec"].items())) for e in manifest.gallery]
    assert len(set(specs)) == len(specs)
    seen = {}
    for e in manifest.gallery:
        seen.setdefault(e["subset_group"], []).append(e["id"])
    all_ids = sorted(i for ids in seen.values() for i in ids)
    assert all_ids == [e["id"] for e in manifest.gallery]
    assert all(len(ids) >= 2 for ids in seen.values())


def test_splits_are_disjoint_and_cover_requested_counts():
    manifest, _ = generate_dataset(17, 100, (0.8, 0.1, 0.1), 16)
    train = set(manifest.splits["train"])
    val = set(manifest.splits["val"])
    test = set(manifest.splits["test"])
    assert len(train) == 80 and len(val) == 10 and len(test) == 10
    assert not (train & val) and not (train & test) and not (val & test)


def test_subset_group_contains_reference_and_target():
    manifest, _ = generate_dataset(19, 80, (0.8, 0.1, 0.1), 16)
    members = {}
    for e in manifest.gallery:
        members.setdefault(e["subset_group"], set()).add(e["id"])
    for t in manifest.triplets:
        assert t.reference_id in members[t.subset_group]
        assert t.target_id in members[t.subset_group]


# ---------------------------------------------------------------------------
# persistence


def test_save_load_roundtrip(tmp_path):
    manifest, images = generate_dataset(23, 60, (0.8, 0.1, 0.1), 16)
    save_dataset(manifest, images, tmp_path)
    ds = load_dataset(tmp_path)
    assert ds.manifest.n_triplets == 60
    assert len(ds.images) == len(manifest.gallery)
    assert ds.manifest.splits == manifest.splits
    for entry in manifest.gallery:
        loaded = (ds.images[entry["id"]] * 255.0).round().astype(np.uint8)
        assert np.array_equal(loaded, images[entry["id"]])


def test_truncated_image_raises_checksum_error_naming_file(tmp_path):
    manifest, images = generate_dataset(29, 40, (0.8, 0.1, 0.1), 16)
    save_dataset(manifest, images, tmp_path)
    victim = tmp_path / manifest.gallery[3]["file"]
    victim.write_bytes(victim.read_bytes()[:-7])
    with pytest.raises(DataError) as exc:
        load_dataset(tmp_path)
    assert victim.name in str(exc.value)


def test_foreign_manifest_version_is_rejected_before_loading_images(tmp_path):
    manifest, images = generate_dataset(31, 40, (0.8, 0.1, 0.1), 16)
    save_dataset(manifest, images, tmp_path)
    payload = json.loads((tmp_path / "manifest.json").read_text())
    payload["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(payload))
    with pytest.raises(DataError) as exc:
        load_dataset(tmp_path)
    assert "format_version" in str(exc.value)


def test_missing_manifest_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)
