import numpy as np
import pytest

from conftest import write_gray_png
from pipelines.ingestion import JSRT_EXTENT, JSRT_MAX, write_jsrt_image
from pipelines.run_pipeline import build_split, load_samples, prepare_dataset
from pipelines.synthetic import make_synthetic_sample, synthetic_samples
from pipelines.transformations import PIPELINE_VERSION, assemble_samples, build_sample
from schema.config import DataConfig, DatasetLayout, RunConfig
from schema.errors import ConfigError, DatasetLoadError, MissingPathError
from storage.tensor_cache import TensorCache, content_key


def assert_sample_contract(sample, resolution):
    assert sample.image.shape == (resolution, resolution, 1)
    assert sample.mask.shape == (resolution, resolution, 4)
    np.testing.assert_array_equal(sample.mask.sum(axis=-1), 1.0)
    x = sample.image.astype(np.float64)
    assert abs(x.mean()) < 1e-4
    assert abs(x.var() - 1.0) < 1e-3
    if not sample.heart_annotated:
        assert not sample.mask[..., 2].any()


# -----------------------------
# Assembly from files
# -----------------------------

def test_heart_free_dataset_samples(png_dataset):
    samples, report = assemble_samples(png_dataset, None, resolution=32)

    assert [s.id for s in samples] == ["case_00", "case_01", "case_02"]
    for s in samples:
        assert_sample_contract(s, 32)
        assert s.heart_annotated is False
        assert s.mask[..., 0].any() and s.mask[..., 1].any()
    assert report.summary()["failed"] == 0


def test_heart_annotated_dataset_has_four_live_channels(png_dataset_with_heart):
    samples, _ = assemble_samples(png_dataset_with_heart, ["case_01"], resolution=32)

    (sample,) = samples
    assert_sample_contract(sample, 32)
    assert sample.heart_annotated
    assert all(sample.mask[..., c].any() for c in range(4))


def test_left_lung_is_on_image_right(png_dataset):
    (sample,), _ = assemble_samples(png_dataset, ["case_00"], resolution=32)

    left_cols = np.nonzero(sample.mask[..., 0].any(axis=0))[0]
    right_cols = np.nonzero(sample.mask[..., 1].any(axis=0))[0]
    assert left_cols.min() > right_cols.max()


def test_missing_mask_aborts_with_report(png_dataset):
    (png_dataset.resolved_root() / "masks/left/case_02.png").unlink()

    with pytest.raises(DatasetLoadError) as err:
        assemble_samples(png_dataset, None, resolution=16)

    failures = err.value.report.failures
    assert [f["id"] for f in failures] == ["case_02"]
    assert "left_lung" in failures[0]["error"]


def test_skip_flag_keeps_the_rest(png_dataset):
    (png_dataset.resolved_root() / "masks/left/case_02.png").unlink()

    samples, report = assemble_samples(png_dataset, None, resolution=16, skip_failed=True)

    assert [s.id for s in samples] == ["case_00", "case_01"]
    assert report.summary()["failed"] == 1


def test_order_follows_ids_with_threads(png_dataset):
    ids = ["case_02", "case_00", "case_01"]
    samples, _ = assemble_samples(png_dataset, ids, resolution=16, workers=3)

    assert [s.id for s in samples] == ids


def test_ingestion_is_deterministic(png_dataset):
    a, _ = assemble_samples(png_dataset, None, resolution=32)
    b, _ = assemble_samples(png_dataset, None, resolution=32, workers=2)

    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.mask.tobytes() == y.mask.tobytes()


def test_tensor_cache_hits_on_second_load(png_dataset, tmp_path):
    cache = TensorCache(tmp_path / "cache")
    first, _ = assemble_samples(png_dataset, None, resolution=16, cache=cache)
    second, report = assemble_samples(png_dataset, None, resolution=16, cache=cache)

    assert cache.hits == 3
    assert report.to_frame()["cached"].all()
    for x, y in zip(first, second):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)


def test_cache_key_tracks_content_and_version(tmp_path):
    f = tmp_path / "a.bin"
    f.write_bytes(b"abc")
    key = content_key([f], PIPELINE_VERSION, 400)

    assert key != content_key([f], PIPELINE_VERSION + "x", 400)
    assert key != content_key([f], PIPELINE_VERSION, 128)
    f.write_bytes(b"abd")
    assert key != content_key([f], PIPELINE_VERSION, 400)


def test_cache_key_tracks_layout_fields(tmp_path):
    f = tmp_path / "a.bin"
    f.write_bytes(b"abc")
    fields = {"image_format": "jsrt_raw", "invert": True, "heart_annotated": True}
    key = content_key([f], PIPELINE_VERSION, 400, fields)

    assert key == content_key([f], PIPELINE_VERSION, 400, dict(reversed(list(fields.items()))))
    assert key != content_key([f], PIPELINE_VERSION, 400, {**fields, "invert": False})
    assert key != content_key([f], PIPELINE_VERSION, 400, {**fields, "heart_annotated": False})
    assert key != content_key([f], PIPELINE_VERSION, 400)


def test_cached_samples_not_shared_across_polarity(tmp_path):
    root = tmp_path / "raw"
    (root / "images").mkdir(parents=True)
    values = np.random.default_rng(0).integers(0, JSRT_MAX, size=(JSRT_EXTENT, JSRT_EXTENT))
    write_jsrt_image(root / "images" / "case_00.IMG", values)
    left = np.zeros((JSRT_EXTENT, JSRT_EXTENT), dtype=np.uint8)
    left[512:1536, 1100:1900] = 255
    write_gray_png(root / "masks" / "left" / "case_00.png", left)
    write_gray_png(root / "masks" / "right" / "case_00.png", left[:, ::-1])
    layout = DatasetLayout(name="raw", root=str(root), image_format="jsrt_raw", image_glob="*.IMG",
                           invert=True, heart_annotated=False, dev_count=1,
                           mask_dirs={"left_lung": "masks/left", "right_lung": "masks/right"})
    cache = TensorCache(tmp_path / "cache")

    film, _ = assemble_samples(layout, None, resolution=32, cache=cache)
    stored, report = assemble_samples(layout.model_copy(update={"invert": False}), None,
                                      resolution=32, cache=cache)

    assert cache.hits == 0
    assert not report.to_frame()["cached"].any()
    np.testing.assert_allclose(stored[0].image, -film[0].image, atol=1e-4)


def test_build_sample_drops_heart_when_unannotated():
    image = np.random.default_rng(0).uniform(size=(20, 20, 1))
    heart = np.ones((20, 20, 1))

    sample, _ = build_sample("x", image, {"heart": heart}, 16, heart_annotated=False)

    assert not sample.mask[..., 2].any()
    assert np.all(sample.mask[..., 3] == 1)


# -----------------------------
# Synthetic data
# -----------------------------

@pytest.mark.parametrize("resolution", [32, 64, 400])
def test_synthetic_sample_contract(resolution):
    sample = make_synthetic_sample(0, resolution)

    assert_sample_contract(sample, resolution)
    assert all(sample.mask[..., c].any() for c in range(4))


def test_synthetic_is_seeded_and_varies_by_index():
    a = synthetic_samples(3, 32, seed=5)
    b = synthetic_samples(3, 32, seed=5)

    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    assert a[0].mask.tobytes() != a[1].mask.tobytes() or a[0].image.tobytes() != a[1].image.tobytes()


def test_synthetic_rejects_bad_resolution():
    with pytest.raises(ConfigError):
        make_synthetic_sample(0, 40)


# -----------------------------
# Prepare pipeline
# -----------------------------

def test_prepare_synthetic(tmp_path):
    config = RunConfig.model_validate({
        "train": {"resolution": 32, "epochs": 1, "pretrain_epochs": 0},
        "data": {"dataset": "synthetic", "synthetic_count": 30},
    })

    summary = prepare_dataset(config, tmp_path)

    assert (summary["development"], summary["evaluation"]) == (20, 10)
    assert summary["loaded"] == 30 and summary["failed"] == 0
    assert (tmp_path / "synthetic_profile.json").exists()
    assert (tmp_path / "load_report.parquet").exists()

    again = prepare_dataset(config, tmp_path / "again")
    assert open(summary["split_file"], "rb").read() == open(again["split_file"], "rb").read()


def test_prepare_names_missing_directory(tmp_path):
    registry = tmp_path / "datasets.yaml"
    registry.write_text(
        "channels: [left_lung, right_lung, heart, background]\n"
        "datasets:\n"
        "  montgomery:\n"
        f"    root: {tmp_path / 'nowhere'}\n"
        "    image_dir: CXR_png\n"
        "    mask_dirs: {left_lung: ManualMask/leftMask, right_lung: ManualMask/rightMask}\n"
        "    heart_annotated: false\n"
        "    dev_count: 117\n"
    )
    config = RunConfig.model_validate({"data": {"dataset": "montgomery", "datasets_registry": str(registry)}})

    with pytest.raises(MissingPathError, match="ManualMask/leftMask"):
        prepare_dataset(config, tmp_path / "out")


def test_combined_split_merges_member_splits():
    data = DataConfig(dataset="combined", split_seed=0)
    layouts = [
        DatasetLayout(name="jsrt", dev_count=3, mask_dirs={}),
        DatasetLayout(name="montgomery", dev_count=2, mask_dirs={}, heart_annotated=False),
    ]
    ids = {"jsrt": ["J1", "J2", "J3", "J4"], "montgomery": ["M1", "M2", "M3"]}

    split = build_split(data, ids, layouts)

    assert len(split.development) == 5 and len(split.evaluation) == 2
    assert sum(i.startswith("J") for i in split.evaluation) == 1


def test_load_samples_follows_split_order():
    data = DataConfig(dataset="synthetic", synthetic_count=6)
    samples, _ = load_samples(data, ["synth_0004", "synth_0001"], 32)

    assert [s.id for s in samples] == ["synth_0004", "synth_0001"]
