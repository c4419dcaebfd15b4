import pytest
from pydantic import ValidationError

from pipelines.splits import DatasetSplit, full_split, load_split, make_split, save_split
from schema.errors import ConfigError, LabelError, MissingPathError


JSRT_IDS = [f"JPCLN{i:03d}" for i in range(1, 155)] + [f"JPCNN{i:03d}" for i in range(1, 94)]
MONTGOMERY_IDS = [f"MCUCXR_{i:04d}_{i % 2}" for i in range(138)]


def test_jsrt_split_sizes():
    split = make_split(JSRT_IDS, seed=0, dev_count=209)

    assert (len(split.development), len(split.evaluation)) == (209, 38)
    assert set(split.development) | set(split.evaluation) == set(JSRT_IDS)


def test_montgomery_split_sizes():
    split = make_split(MONTGOMERY_IDS, seed=3, dev_count=117)

    assert (len(split.development), len(split.evaluation)) == (117, 21)


def test_same_seed_same_lists_and_input_order_irrelevant():
    a = make_split(JSRT_IDS, seed=7, dev_count=209)
    b = make_split(list(reversed(JSRT_IDS)), seed=7, dev_count=209)

    assert a == b
    assert a != make_split(JSRT_IDS, seed=8, dev_count=209)


def test_duplicate_ids_rejected():
    with pytest.raises(LabelError, match="duplicate"):
        make_split(["a", "b", "a", "c"], seed=0, dev_count=2)


def test_dev_count_must_leave_evaluation_samples():
    with pytest.raises(ConfigError):
        make_split(["a", "b", "c"], seed=0, dev_count=3)


def test_validation_carved_from_development():
    split = make_split(JSRT_IDS, seed=0, dev_count=209, val_count=20)

    assert len(split.validation) == 20
    assert set(split.validation) <= set(split.development)
    assert len(split.training) == 189


def test_overlapping_lists_rejected():
    with pytest.raises(ValidationError):
        DatasetSplit(development=["a", "b"], evaluation=["b"])


def test_saved_split_is_byte_stable(tmp_path):
    split = make_split(MONTGOMERY_IDS, seed=1, dev_count=117, dataset="montgomery")
    first = save_split(split, tmp_path / "a.json").read_bytes()
    second = save_split(make_split(MONTGOMERY_IDS, seed=1, dev_count=117, dataset="montgomery"),
                        tmp_path / "b.json").read_bytes()

    assert first == second
    assert load_split(tmp_path / "a.json") == split


def test_full_split_evaluates_everything():
    split = full_split(MONTGOMERY_IDS, "montgomery")

    assert split.development == []
    assert len(split.evaluation) == 138


def test_missing_split_file(tmp_path):
    with pytest.raises(MissingPathError):
        load_split(tmp_path / "nope.json")
