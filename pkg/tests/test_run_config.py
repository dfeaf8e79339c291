import json

import numpy as np
import pytest

from experiments import DEFAULTS, EXPERIMENTS
from lss_clt import ConfigError
from lss_clt.run_config import (
    build_model_from_config,
    clt_options_from_config,
    config_hash,
    functions_from_config,
    load_config_file,
    merge,
    resolve_config,
    scaling_from_config,
    z_points_from_config
)


def test_merge_replaces_lists_and_merges_dicts():
    base = {"a": {"x": 1, "y": 2}, "b": [1, 2]}
    merged = merge(base, {"a": {"y": 3}, "b": [4]})
    assert merged == {"a": {"x": 1, "y": 3}, "b": [4]}
    assert base["a"]["y"] == 2


def test_layer_precedence():
    preset = {"contour": {"nodes": 64}, "mc": {"replicates": 10}}
    file_config = {"contour": {"nodes": 32, "margin": 1.0}}
    overrides = {"contour": {"nodes": 16}}
    config = resolve_config(DEFAULTS, preset, file_config, overrides)
    assert config["contour"]["nodes"] == 16
    assert config["contour"]["margin"] == 1.0
    assert config["mc"]["replicates"] == 10
    assert config["contour"]["radius_ratio"] == DEFAULTS["contour"]["radius_ratio"]


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="unknown config field"):
        resolve_config(DEFAULTS, file_config={"contours": {}})


def test_hash_is_stable_and_ignores_output_dir():
    first = resolve_config(DEFAULTS, EXPERIMENTS["mp-small"])
    second = resolve_config(DEFAULTS, EXPERIMENTS["mp-small"], overrides={"output_dir": "elsewhere"})
    assert config_hash(first) == config_hash(second)
    assert len(config_hash(first)) == 16
    third = resolve_config(DEFAULTS, EXPERIMENTS["mp-small"], overrides={"contour": {"nodes": 64}})
    assert config_hash(third) != config_hash(first)


def test_malformed_file_names_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "contour": {"nodes": 8,}\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:2:"):
        load_config_file(str(path))


def test_file_must_hold_an_object(tmp_path):
    path = tmp_path / "list.json"
    path.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        load_config_file(str(path))


@pytest.mark.parametrize("name", ["mp-small", "zero-sigma", "two-level-dense"])
def test_presets_build_models(name):
    config = resolve_config(DEFAULTS, EXPERIMENTS[name])
    model = build_model_from_config(config)
    section = EXPERIMENTS[name]["model"]
    assert (model.n, model.N, model.k) == (section["n"], section["N"], len(section["spectra"]))


@pytest.mark.parametrize("name", ["table1-full", "table1-desk"])
def test_table_presets_use_literal_decay(name):
    section = resolve_config(DEFAULTS, EXPERIMENTS[name])["table1"]
    assert section["index_scale"] == 1
    assert section["moment_map"] == "exact"
    assert section["F"] == section["p"]


def test_rescaled_table_preset_is_separate():
    section = EXPERIMENTS["table1-full-rescaled"]["table1"]
    assert section["index_scale"] == section["p"] == 500
    assert section["moment_map"] == "equivalent"


def test_dense_preset_does_not_commute():
    model = build_model_from_config(resolve_config(DEFAULTS, EXPERIMENTS["two-level-dense"]))
    assert model.spectral_diagonals is None


def test_design_model_from_config():
    config = resolve_config(DEFAULTS, file_config={"model": {
        "design": {"kind": "group-sizes", "group_sizes": [[1, 2, 2], [1, 1, 1, 1, 1]]},
        "p": 2,
        "spectra": ["identity", {"kind": "scaled-identity", "tau_e": 0.5}]}})
    model = build_model_from_config(config)
    assert (model.n, model.N, model.k) == (2, 3, 2)
    assert np.allclose(model.scalings_sq[0], [1.0, 2.0, 2.0])


def test_missing_model_section():
    with pytest.raises(ConfigError, match="model"):
        build_model_from_config(resolve_config(DEFAULTS))


def test_scaling_entries():
    assert np.allclose(scaling_from_config({"constant": 2.0}, 3), [2.0, 2.0, 2.0])
    drawn = scaling_from_config({"uniform": [0.5, 1.5], "seed": 3}, 50)
    assert np.all((drawn >= 0.5) & (drawn <= 1.5))
    assert np.array_equal(drawn, scaling_from_config({"uniform": [0.5, 1.5], "seed": 3}, 50))
    with pytest.raises(ConfigError):
        scaling_from_config({"normal": 1.0}, 3)


def test_options_and_points():
    config = resolve_config(DEFAULTS, overrides={"contour": {"nodes": 32, "mode": "shared-R"},
                                                 "solve": {"z": [[1.0, 0.5], [2.0, 1.0]]}})
    opts = clt_options_from_config(config, workers=2)
    assert (opts.nodes, opts.mode, opts.workers) == (32, "shared-R", 2)
    assert opts.solver.tol == DEFAULTS["solver"]["tol"]
    assert z_points_from_config(config) == [1.0 + 0.5j, 2.0 + 1.0j]
    assert [f.label for f in functions_from_config(config)] == ["x", "x^2"]


def test_unknown_contour_field_rejected():
    config = resolve_config(DEFAULTS, overrides={"contour": {"points": 8}})
    with pytest.raises(ConfigError, match="contour.points"):
        clt_options_from_config(config)
