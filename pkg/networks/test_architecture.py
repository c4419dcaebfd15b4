import copy

import pytest

from networks.architecture import (
    LayerSpec,
    budget_band,
    conv_layer_count,
    critic_table,
    describe_table,
    down_path,
    fingerprint,
    load_architecture_registry,
    segmentor_table,
    spec_param_count,
    table_param_count,
    validate_table,
)
from schema.errors import ConfigError


SEGMENTOR_PARAMS = 286_759
CRITIC_PARAMS = 243_212
CRITIC_PARAMS_WITH_IMAGE = 243_604


def test_segmentor_has_twenty_convolutions():
    assert conv_layer_count(segmentor_table()) == 20
    assert conv_layer_count(segmentor_table()) == load_architecture_registry()["budgets"]["conv_layers"]


def test_first_convolution_produces_eight_maps():
    stem = segmentor_table()[0]
    assert (stem.kind, stem.in_channels, stem.out_channels) == ("conv", 1, 8)


def test_exact_parameter_counts():
    assert table_param_count(segmentor_table()) == SEGMENTOR_PARAMS
    assert table_param_count(critic_table()) == CRITIC_PARAMS
    assert table_param_count(critic_table(include_image=True)) == CRITIC_PARAMS_WITH_IMAGE


def test_counts_inside_budget_bands():
    low, high = budget_band("segmentor")
    assert (low, high) == (243_900, 298_100)
    assert low <= SEGMENTOR_PARAMS <= high

    low, high = budget_band("critic")
    assert (low, high) == (232_200, 283_800)
    assert low <= CRITIC_PARAMS <= high
    assert low <= CRITIC_PARAMS_WITH_IMAGE <= high


def test_stage_resolutions_at_default_build():
    table = segmentor_table()
    down = [s.resolution for s in table if s.kind == "avg_pool"]
    up = [s.out_resolution for s in table if s.kind == "transposed_conv"]

    assert down == [400, 200, 100, 50]
    assert up == [50, 100, 200, 400]
    assert table[-1].kind == "softmax" and table[-1].out_channels == 4


def test_parameter_count_independent_of_resolution():
    assert table_param_count(segmentor_table(64)) == SEGMENTOR_PARAMS
    assert table_param_count(critic_table(32)) == CRITIC_PARAMS


def test_closed_form_single_layer_counts():
    assert spec_param_count(LayerSpec(kind="conv", kernel=3, in_channels=8, out_channels=16, resolution=32)) == 1168
    assert spec_param_count(LayerSpec(kind="conv", kernel=1, in_channels=64, out_channels=4, resolution=32)) == 260
    assert table_param_count([]) == 0


def test_critic_mirrors_segmentor_down_path():
    seg, crit = down_path(segmentor_table()), down_path(critic_table())

    assert [s.kind for s in seg] == [s.kind for s in crit]
    assert [s.out_channels for s in seg] == [s.out_channels for s in crit]
    assert seg[1:] == crit[1:]
    assert (seg[0].in_channels, crit[0].in_channels) == (1, 4)
    assert critic_table(include_image=True)[0].in_channels == 5


def test_critic_head_reduces_to_one_unit():
    head = critic_table()[-2:]
    assert [s.kind for s in head] == ["global_pool", "dense"]
    assert head[-1].out_channels == 1 and head[-1].activation == "sigmoid"


def test_fingerprint_tracks_schedule_and_resolution():
    assert fingerprint(segmentor_table()) == fingerprint(segmentor_table())
    assert fingerprint(segmentor_table()) != fingerprint(segmentor_table(64))
    assert fingerprint(critic_table()) != fingerprint(critic_table(include_image=True))


@pytest.mark.parametrize("resolution", [40, 8, 401])
def test_resolution_must_be_multiple_of_sixteen(resolution):
    with pytest.raises(ConfigError, match="multiple of 16"):
        segmentor_table(resolution)


@pytest.mark.parametrize("kernel,stride", [(3, 2), (5, 2)])
def test_bad_transposed_geometry_rejected_at_build(kernel, stride):
    registry = copy.deepcopy(load_architecture_registry())
    registry["segmentor"]["up_path"][0].update(kernel=kernel, stride=stride)

    with pytest.raises(ConfigError):
        segmentor_table(registry=registry)


def test_channel_chaining_checked():
    registry = copy.deepcopy(load_architecture_registry())
    registry["segmentor"]["up_path"][1]["in"] = 48

    with pytest.raises(ConfigError, match="input channels"):
        segmentor_table(registry=registry)


def test_even_conv_kernel_rejected():
    with pytest.raises(ConfigError, match="odd"):
        validate_table([LayerSpec(kind="conv", kernel=2, in_channels=1, out_channels=1, resolution=16)])


def test_describe_table_rows():
    rows = describe_table(segmentor_table())

    assert sum(r["params"] for r in rows) == SEGMENTOR_PARAMS
    assert rows[8]["kind"] == "resblock x5"
    assert rows[8]["resolution"] == "25->25"
