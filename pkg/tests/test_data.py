import json

import numpy as np
import pytest

from mvdamage.data import (
    AUGMENT_KINDS,
    DAMAGE_FRACTIONS,
    GEOMETRIC_KINDS,
    MANIFEST_VERSION,
    AugmentError,
    AugmentOp,
    Dataset,
    ManifestError,
    augment,
    dataset_digest,
    draw_scene_spec,
    generate_synthetic_dataset,
    largest_remainder,
    load_image,
    load_manifest,
    load_mask,
    random_augment,
    render_view,
    run_pipeline,
    run_sample_pipeline,
    sample_op,
    sample_ops,
    save_image,
    save_mask,
    split_dataset,
)
from mvdamage.data.synthetic import draw_labels
from mvdamage.models import GROUND_ROLES, VIEW_ROLES, DamageState, ViewRole

PHOTOMETRIC_KINDS = [k for k in AUGMENT_KINDS if k not in GEOMETRIC_KINDS]


class TestLargestRemainder:
    @pytest.mark.parametrize(
        "total, fractions, expected",
        [
            (10, (0.8, 0.1, 0.1), [8, 1, 1]),
            (40, (0.8, 0.1, 0.1), [32, 4, 4]),
            (7, (1 / 3, 1 / 3, 1 / 3), [3, 2, 2]),
            (5, (0.8, 0.1, 0.1), [4, 1, 0]),
            (3, (0.2,) * 5, [1, 1, 1, 0, 0]),
        ],
    )
    def test_counts(self, total, fractions, expected):
        assert largest_remainder(total, fractions) == expected

    def test_draw_labels_follow_mix(self):
        labels = draw_labels(12, (0.5, 0.25, 0.25, 0.0, 0.0), np.random.default_rng(0))
        assert np.bincount(labels, minlength=5).tolist() == [6, 3, 3, 0, 0]


class TestSceneSpec:
    def _spec(self, level, directional, seed=0):
        return draw_scene_spec("b0000", level, directional, np.random.default_rng(seed), 64)

    def test_undamaged_building_shows_nothing(self):
        assert self._spec(0, False).damaged_views == ()
        assert self._spec(0, True).damaged_views == ()

    @pytest.mark.parametrize("level", [1, 2])
    def test_wall_damage_visible_from_ground(self, level):
        assert self._spec(level, False).damaged_views == GROUND_ROLES
        (only,) = self._spec(level, True).damaged_views
        assert only.is_ground

    @pytest.mark.parametrize("level", [3, 4])
    def test_roof_damage_visible_from_above(self, level):
        assert self._spec(level, False).damaged_views == GROUND_ROLES + (ViewRole.OVERHEAD,)
        spec = self._spec(level, True)
        assert spec.directional and ViewRole.OVERHEAD in spec.damaged_views

    def test_directional_flag_does_not_shift_stream(self):
        plain = self._spec(0, False, seed=4)
        flagged = self._spec(0, True, seed=4)
        assert plain == flagged


class TestRenderView:
    @pytest.mark.parametrize("seed", range(6))
    def test_damage_is_exact_fraction_of_building(self, seed):
        rng = np.random.default_rng(seed)
        level = int(rng.integers(0, 5))
        spec = draw_scene_spec("b0001", level, bool(seed % 2), rng, 64)
        for role in VIEW_ROLES:
            view = render_view(spec, role)
            assert view.image.shape == (64, 64, 3) and view.image.dtype == np.uint8
            assert set(np.unique(view.mask)) <= {0, 1} and view.mask.any()
            assert not (view.damage & (1 - view.mask)).any()
            if spec.shows_damage(role):
                expected = int(round(DAMAGE_FRACTIONS[level] * view.mask.sum()))
                assert int(view.damage.sum()) == expected
            else:
                assert not view.damage.any()

    def test_deterministic(self):
        spec = draw_scene_spec("b0002", 3, False, np.random.default_rng(9), 48)
        for role in VIEW_ROLES:
            first, second = render_view(spec, role), render_view(spec, role)
            assert np.array_equal(first.image, second.image)
            assert np.array_equal(first.mask, second.mask)

    def test_damage_changes_pixels(self):
        rng_state = np.random.default_rng(2)
        spec = draw_scene_spec("b0003", 4, False, rng_state, 64)
        clean = spec._replace(damaged_views=())
        damaged = render_view(spec, ViewRole.GROUND_1)
        plain = render_view(clean, ViewRole.GROUND_1)
        assert np.array_equal(damaged.mask, plain.mask)
        assert (damaged.image != plain.image).any(axis=2).sum() > 0


class TestGenerate:
    def test_layout(self, dataset_root):
        manifest = load_manifest(dataset_root)
        assert len(manifest) == 10
        assert np.bincount([int(s.label) for s in manifest], minlength=5).tolist() == [2] * 5
        assert manifest.split_counts() == {"train": 8, "val": 1, "test": 1}
        for sample in manifest:
            assert [v.role for v in sample.views] == list(VIEW_ROLES)
            for view in sample.views:
                assert (dataset_root / view.image).is_file()
                assert (dataset_root / view.mask).is_file()
            assert sample.provenance["generator"] == "synthetic"

    def test_directional_fraction(self, dataset_root):
        manifest = load_manifest(dataset_root)
        damaged = [s for s in manifest if s.label > 0]
        directional = [
            s for s in damaged if sum(ViewRole(r).is_ground for r in s.provenance["damaged_views"]) == 1
        ]
        assert len(directional) == round(0.5 * len(damaged))

    def test_same_seed_same_bytes(self, tmp_path):
        first = generate_synthetic_dataset(5, (0.2,) * 5, 0.3, 11, tmp_path / "a", image_size=32)
        second = generate_synthetic_dataset(5, (0.2,) * 5, 0.3, 11, tmp_path / "b", image_size=32)
        assert first.dumps() == second.dumps()
        assert dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")
        third = generate_synthetic_dataset(5, (0.2,) * 5, 0.3, 12, tmp_path / "c", image_size=32)
        assert dataset_digest(tmp_path / "c") != dataset_digest(tmp_path / "a")

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_buildings": 4},
            {"class_mix": (0.5, 0.5)},
            {"class_mix": (0.5, 0.5, 0.5, 0.0, 0.0)},
            {"directional_fraction": 1.5},
            {"image_size": 16},
        ],
    )
    def test_rejects_bad_arguments(self, tmp_path, kwargs):
        arguments = dict(n_buildings=5, class_mix=(0.2,) * 5, directional_fraction=0.3, seed=0, out_dir=tmp_path)
        arguments.update(kwargs)
        with pytest.raises(ValueError):
            generate_synthetic_dataset(**arguments)

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ManifestError):
            generate_synthetic_dataset(5, (0.2,) * 5, 0.0, 0, blocker / "data", image_size=32)


class TestSplit:
    def test_whole_buildings_are_disjoint(self, dataset_root):
        manifest = load_manifest(dataset_root)
        names = [set(s.building_id for s in manifest.split(n)) for n in ("train", "val", "test")]
        assert sum(len(n) for n in names) == 10
        assert set.union(*names) == {s.building_id for s in manifest}

    def test_seeded(self, dataset_root):
        manifest = load_manifest(dataset_root)
        assert split_dataset(manifest, seed=1).splits == split_dataset(manifest, seed=1).splits
        assert split_dataset(manifest, seed=1).splits != split_dataset(manifest, seed=2).splits

    def test_empty_split(self, tmp_path):
        manifest = generate_synthetic_dataset(5, (0.2,) * 5, 0.0, 0, tmp_path, image_size=32)
        with pytest.raises(ValueError):
            split_dataset(manifest)

    def test_bad_fractions(self, dataset_root):
        with pytest.raises(ValueError):
            split_dataset(load_manifest(dataset_root), (0.5, 0.5))

    def test_unknown_split_name(self, dataset_root):
        with pytest.raises(ValueError):
            load_manifest(dataset_root).split("holdout")


class TestLoadManifest:
    def _document(self, dataset_root):
        return json.loads((dataset_root / "manifest.json").read_text())

    def _load(self, dataset_root, tmp_path, document, check_files=False):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(document))
        return load_manifest(path, check_files=check_files)

    def test_round_trip(self, dataset_root, tmp_path):
        manifest = load_manifest(dataset_root)
        copy = self._load(dataset_root, tmp_path, self._document(dataset_root))
        assert copy.samples == manifest.samples and copy.splits == manifest.splits
        assert copy.version == MANIFEST_VERSION

    def test_version(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        document["version"] = "mvdamage-manifest/0"
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)

    @pytest.mark.parametrize("label", [5, -1, "DS-2", True, None])
    def test_label(self, dataset_root, tmp_path, label):
        document = self._document(dataset_root)
        document["samples"][3]["label"] = label
        with pytest.raises(ManifestError) as error:
            self._load(dataset_root, tmp_path, document)
        assert error.value.building_id == document["samples"][3]["building_id"]

    def test_missing_view(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        del document["samples"][0]["views"][4]
        with pytest.raises(ManifestError, match="overhead"):
            self._load(dataset_root, tmp_path, document)

    def test_duplicate_role(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        views = document["samples"][0]["views"]
        views[1] = dict(views[0])
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)

    def test_unknown_role(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        document["samples"][0]["views"][0]["role"] = "drone"
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)

    def test_missing_file(self, dataset_root, tmp_path):
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, self._document(dataset_root), check_files=True)

    def test_duplicate_building(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        document["samples"].append(document["samples"][0])
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)

    def test_split_of_unknown_building(self, dataset_root, tmp_path):
        document = self._document(dataset_root)
        document["splits"]["b9999"] = "train"
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)

    def test_bad_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path)

    @pytest.mark.parametrize("document", [[], "mvdamage-manifest/1", 3, None])
    def test_document_not_an_object(self, tmp_path, document):
        (tmp_path / "manifest.json").write_text(json.dumps(document))
        with pytest.raises(ManifestError, match="not a JSON object"):
            load_manifest(tmp_path)

    @pytest.mark.parametrize(
        "edit",
        [
            lambda d: d.update(samples={"b0000": {}}),
            lambda d: d.update(splits=["train"]),
            lambda d: d["samples"].__setitem__(0, "b0000"),
            lambda d: d["samples"][0].update(views={"ground-1": {}}),
            lambda d: d["samples"][0]["views"].__setitem__(2, ["ground-3", "a.png", "a_mask.png"]),
            lambda d: d["samples"][0]["views"][0].update(role=["ground-1"]),
            lambda d: d["samples"][0].update(provenance="synthetic"),
        ],
    )
    def test_malformed_entries(self, dataset_root, tmp_path, edit):
        document = self._document(dataset_root)
        edit(document)
        with pytest.raises(ManifestError):
            self._load(dataset_root, tmp_path, document)


class TestDataset:
    def test_classification_items(self, dataset):
        items = dataset.classification_items("train")
        assert len(items) == 8
        for item in items:
            assert len(item.images) == len(item.masks) == 5
            for image, mask in zip(item.images, item.masks):
                assert image.shape == (3, 32, 32) and image.dtype == np.float32
                assert 0.0 <= image.min() and image.max() <= 1.0
                assert set(np.unique(mask)) <= {0, 1}
            assert isinstance(item.label, DamageState)

    def test_segmentation_items(self, dataset):
        items = dataset.segmentation_items("val")
        assert [i.role for i in items] == list(VIEW_ROLES)
        assert len({i.building_id for i in items}) == 1

    def test_masked_views(self, dataset):
        item = dataset.classification_items("test")[0]
        for masked, mask in zip(item.masked_views(), item.masks):
            assert not masked[:, mask == 0].any()

    def test_class_counts(self, dataset):
        assert dataset.class_counts("train").sum() == 8
        total = sum(dataset.class_counts(s) for s in ("train", "val", "test"))
        assert total.tolist() == [2] * 5

    def test_cache(self, dataset):
        sample = dataset.manifest.split("train")[0]
        assert dataset.load(sample) is dataset.load(sample)


class TestImages:
    def test_image_round_trip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float32) / 255.0
        save_image(pixels, tmp_path / "x.png")
        np.testing.assert_allclose(load_image(tmp_path / "x.png"), pixels, atol=1e-6)

    def test_mask_round_trip(self, tmp_path, rng):
        mask = rng.integers(0, 2, size=(6, 4)).astype(np.uint8)
        save_mask(mask, tmp_path / "m.png")
        assert np.array_equal(load_mask(tmp_path / "m.png"), mask)


def _aligned_sample(rng, size=32):
    mask = np.zeros((size, size), np.uint8)
    mask[8:20, 6:26] = 1
    image = np.repeat(mask[None].astype(np.float32), 3, axis=0)
    return image, mask


class TestAugment:
    @pytest.mark.parametrize("kind", sorted(GEOMETRIC_KINDS))
    @pytest.mark.parametrize("seed", range(5))
    def test_geometric_ops_move_mask_with_image(self, rng, kind, seed):
        image, mask = _aligned_sample(rng)
        out_image, out_mask = augment(image, mask, [sample_op(kind, seed, mask.shape)])
        assert set(np.unique(out_mask)) <= {0, 1}
        assert np.array_equal((out_image[0] > 0.5).astype(np.uint8), out_mask)

    @pytest.mark.parametrize("kind", PHOTOMETRIC_KINDS)
    def test_photometric_ops_keep_mask(self, rng, kind):
        image = rng.uniform(size=(3, 32, 32)).astype(np.float32)
        mask = rng.integers(0, 2, size=(32, 32)).astype(np.uint8)
        out_image, out_mask = augment(image, mask, [sample_op(kind, 3, mask.shape)])
        assert np.array_equal(out_mask, mask)
        assert out_image.shape == image.shape
        assert 0.0 <= out_image.min() and out_image.max() <= 1.0

    def test_horizontal_flip(self, rng):
        image = rng.uniform(size=(3, 4, 6)).astype(np.float32)
        mask = rng.integers(0, 2, size=(4, 6)).astype(np.uint8)
        out_image, out_mask = augment(image, mask, [AugmentOp("horizontal-flip", {}, 0)])
        assert np.array_equal(out_image, image[:, :, ::-1])
        assert np.array_equal(out_mask, mask[:, ::-1])

    def test_seeded(self, rng):
        image = rng.uniform(size=(3, 32, 32)).astype(np.float32)
        mask = rng.integers(0, 2, size=(32, 32)).astype(np.uint8)
        first = random_augment(image, mask, 17)
        second = random_augment(image, mask, 17)
        assert np.array_equal(first[0], second[0]) and np.array_equal(first[1], second[1])
        assert sample_ops(17, (32, 32)) == sample_ops(17, (32, 32))

    def test_unknown_kind(self):
        with pytest.raises(AugmentError):
            sample_op("mosaic", 0, (32, 32))

    def test_input_is_not_modified(self, rng):
        image = rng.uniform(size=(3, 32, 32)).astype(np.float32)
        mask = rng.integers(0, 2, size=(32, 32)).astype(np.uint8)
        before = image.copy(), mask.copy()
        random_augment(image, mask, 5)
        assert np.array_equal(image, before[0]) and np.array_equal(mask, before[1])


class RecordingClassifier:
    """Model-C stand-in that records the masked views it was given"""

    def __init__(self, probabilities, roles=VIEW_ROLES):
        self.probabilities = np.asarray(probabilities, dtype=np.float64)
        self.roles = roles
        self.seen = None

    def predict(self, views):
        self.seen = views
        return self.probabilities


class ChannelLocalizer:
    """Model-L stand-in: the first channel of each image is its building probability"""

    def predict(self, images):
        return images[:, 0]


class TestPipeline:
    def _images(self, rng):
        return [rng.uniform(size=(3, 8, 8)).astype(np.float32) for _ in VIEW_ROLES]

    def test_uses_model_l_masks(self, rng):
        images = self._images(rng)
        classifier = RecordingClassifier([0.1, 0.1, 0.6, 0.1, 0.1])
        result = run_pipeline(ChannelLocalizer(), classifier, images, threshold=0.5)
        assert result.prediction is DamageState.DS_2
        for image, mask, seen in zip(images, result.masks, classifier.seen):
            assert np.array_equal(mask, (image[0] >= 0.5).astype(np.uint8))
            assert not seen[:, mask == 0].any()

    def test_oracle_masks_bypass_model_l(self, rng):
        images = self._images(rng)
        masks = [np.ones((8, 8), np.uint8)] * 5
        classifier = RecordingClassifier([0.0, 0.0, 0.0, 0.0, 1.0])
        result = run_pipeline(None, classifier, images, oracle_masks=masks)
        assert result.prediction is DamageState.DS_4
        assert all(np.array_equal(seen, image) for seen, image in zip(classifier.seen, images))

    def test_ties_go_to_lower_state(self, rng):
        result = run_pipeline(None, RecordingClassifier([0.2] * 5), self._images(rng), oracle_masks=[np.ones((8, 8))] * 5)
        assert result.prediction is DamageState.DS_0

    def test_single_view_classifier(self, rng):
        images = self._images(rng)
        classifier = RecordingClassifier([0.0, 1.0, 0.0, 0.0, 0.0], roles=(ViewRole.OVERHEAD,))
        run_pipeline(None, classifier, images, oracle_masks=[np.ones((8, 8))] * 5)
        assert len(classifier.seen) == 1 and np.array_equal(classifier.seen[0], images[4])

    def test_rejects_wrong_counts(self, rng):
        images = self._images(rng)
        with pytest.raises(ValueError):
            run_pipeline(ChannelLocalizer(), RecordingClassifier([1, 0, 0, 0, 0]), images[:4])
        with pytest.raises(ValueError):
            run_pipeline(None, RecordingClassifier([1, 0, 0, 0, 0]), images, oracle_masks=[np.ones((8, 8))] * 4)
        with pytest.raises(ValueError):
            run_pipeline(None, RecordingClassifier([1, 0, 0, 0, 0]), images)

    def test_sample_with_oracle_masks(self, dataset):
        sample = dataset.manifest.split("train")[0]
        classifier = RecordingClassifier([0.0, 0.7, 0.1, 0.1, 0.1])
        result = run_sample_pipeline(None, classifier, sample, dataset, use_oracle_masks=True)
        item = dataset.load(sample)
        assert result.prediction is DamageState.DS_1
        assert all(np.array_equal(a, b) for a, b in zip(result.masks, item.masks))
        assert all(np.array_equal(a, b) for a, b in zip(classifier.seen, item.masked_views()))

    def test_sample_and_loaded_item_agree(self, dataset):
        sample = dataset.manifest.split("train")[1]
        from_sample = run_sample_pipeline(ChannelLocalizer(), RecordingClassifier([0.3, 0.1, 0.1, 0.1, 0.4]), sample, dataset)
        from_item = run_sample_pipeline(
            ChannelLocalizer(), RecordingClassifier([0.3, 0.1, 0.1, 0.1, 0.4]), dataset.load(sample)
        )
        assert from_sample.prediction is from_item.prediction is DamageState.DS_4
        assert all(np.array_equal(a, b) for a, b in zip(from_sample.masks, from_item.masks))

    def test_sample_needs_dataset(self, dataset):
        sample = dataset.manifest.split("train")[0]
        with pytest.raises(ValueError, match=sample.building_id):
            run_sample_pipeline(None, RecordingClassifier([1, 0, 0, 0, 0]), sample, use_oracle_masks=True)
        with pytest.raises(ValueError):
            run_sample_pipeline(None, RecordingClassifier([1, 0, 0, 0, 0]), dataset.load(sample))
