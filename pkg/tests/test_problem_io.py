import copy
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from robsyn.lft import StateSpace, UncertaintyStructure, build_delta_matrix, close_upper
from robsyn.problem import (
    ProblemFile,
    load_problem,
    normalize_plant,
    parse_problem,
    save_problem,
)


def base_problem():
    """A 2-state, 1-parameter problem with every channel width 1."""
    return {
        "name": "toy",
        "plant": {
            "A": [[0.0, 1.0], [-1.0, -0.6]],
            "Bp": [[0.0], [1.0]],
            "Bw": [[0.0], [1.0]],
            "Bu": [[0.0], [1.0]],
            "Cq": [[1.0, 0.0]],
            "Cz": [[1.0, 0.0]],
            "Cy": [[1.0, 0.0]],
            "D": {"zu": [[0.1]]},
        },
        "uncertainty": {"blocks": [1]},
        "controller": {"order": 0},
        "options": {"eps": 0.05, "seed": 3},
    }


def test_load_msd_problem_shapes():
    prob = load_problem("problems/msd_2param.json")
    assert prob.plant.sys.A.shape == (3, 3)
    assert prob.plant.n_delta == 2
    assert prob.plant.n_perf_in == 1
    assert prob.plant.n_ctrl_in == 1
    assert prob.plant.n_perf_out == 2
    assert prob.plant.n_meas_out == 1
    assert prob.structure.block_sizes == (1, 1)
    assert prob.cstructure.n_states == 1
    assert prob.cstructure.n_params == 4
    assert prob.options.eps == 0.01
    assert prob.options.seed == 0
    assert prob.kappa0 is None


def test_flat_lists_and_missing_d_blocks():
    data = base_problem()
    # a flat list is a single row; omitted D blocks are zero
    data["plant"]["Cy"] = [1.0, 0.0]
    prob = parse_problem(data)
    assert prob.plant.sys.C.shape == (3, 2)
    d = prob.plant.sys.D
    assert_allclose(d[2, :], [0.0, 0.0, 0.0])  # yp, yw, yu all zero


def test_empty_matrix_means_no_states():
    prob = load_problem("problems/static_toy.json")
    assert prob.plant.sys.n_states == 0
    assert prob.plant.n_delta == 1
    assert prob.cstructure.n_states == 0
    assert prob.cstructure.n_params == 1


def test_save_load_round_trip(tmp_path):
    prob = load_problem("problems/msd_2param.json")
    out = tmp_path / "copy.json"
    save_problem(prob, out)
    again = load_problem(out)
    assert_allclose(again.plant.sys.A, prob.plant.sys.A)
    assert_allclose(again.plant.sys.B, prob.plant.sys.B)
    assert_allclose(again.plant.sys.C, prob.plant.sys.C)
    assert_allclose(again.plant.sys.D, prob.plant.sys.D)
    assert again.structure.block_sizes == prob.structure.block_sizes
    assert again.options == prob.options
    assert_allclose(again.physical_ranges, prob.physical_ranges)
    assert again.cstructure.n_params == prob.cstructure.n_params
    assert np.array_equal(again.cstructure.free_A, prob.cstructure.free_A)


def test_save_load_keeps_physical_ranges(tmp_path):
    data = base_problem()
    data["uncertainty"]["ranges"] = [[0.5, 1.5]]
    prob = parse_problem(data)
    out = tmp_path / "scaled.json"
    save_problem(prob, out)
    again = load_problem(out)
    assert_allclose(again.physical_ranges, [[0.5, 1.5]])
    # the stored plant is already normalized; reloading must not rescale it
    assert_allclose(again.plant.sys.B, prob.plant.sys.B)
    assert_allclose(again.plant.sys.D, prob.plant.sys.D)


def test_normalization_matches_physical_substitution():
    data = base_problem()
    raw = parse_problem(data).plant  # ranges default to [-1, 1]: untouched
    structure = UncertaintyStructure([1])
    ranges = [[-0.8, 0.4]]
    normed = normalize_plant(raw, structure, ranges)
    for delta in (-1.0, -0.3, 0.0, 0.8, 1.0):
        phys = 0.5 * (-0.8 + 0.4) + 0.5 * (0.4 - -0.8) * delta
        block_n = StateSpace.static(build_delta_matrix(structure, [delta]))
        block_p = StateSpace.static(build_delta_matrix(structure, [phys]))
        sys_n = close_upper(normed.uncertainty_view(), block_n)
        sys_p = close_upper(raw.uncertainty_view(), block_p)
        for omega in (0.0, 0.7, 4.0):
            assert_allclose(
                sys_n.freq_response(omega), sys_p.freq_response(omega), atol=1e-12
            )


def test_degenerate_range_rejected():
    data = base_problem()
    data["uncertainty"]["ranges"] = [[1.0, 1.0]]
    with pytest.raises(ValueError, match="fold constant parameters"):
        parse_problem(data)


def test_controller_masks_mix_free_and_fixed():
    data = base_problem()
    data["controller"] = {
        "order": 1,
        "A": [["?"]],
        "B": [[2.5]],
        "C": [["?"]],
        "D": [[0.0]],
    }
    prob = parse_problem(data)
    cs = prob.cstructure
    assert cs.n_params == 2  # A and C entries free
    assert not cs.free_B[0, 0] and cs.fixed_B[0, 0] == 2.5
    assert not cs.free_D[0, 0] and cs.fixed_D[0, 0] == 0.0


def test_controller_mask_rejects_booleans():
    data = base_problem()
    data["controller"] = {"order": 0, "D": [[True]]}
    with pytest.raises(ValueError, match="'\\?' or numbers"):
        parse_problem(data)


def test_controller_mask_shape_checked():
    data = base_problem()
    data["controller"] = {"order": 2, "A": [["?", "?"]]}
    with pytest.raises(ValueError, match="expected 2 rows"):
        parse_problem(data)


def test_unknown_option_key_rejected():
    data = base_problem()
    data["options"]["stepsize"] = 0.1
    with pytest.raises(ValueError, match="unknown keys"):
        parse_problem(data)


def test_blocks_must_match_plant_width():
    data = base_problem()
    data["uncertainty"]["blocks"] = [1, 1]
    with pytest.raises(ValueError, match="blocks sum to 2"):
        parse_problem(data)


def test_missing_blocks_rejected():
    data = base_problem()
    del data["uncertainty"]["blocks"]
    with pytest.raises(ValueError, match="blocks is required"):
        parse_problem(data)


def test_inconsistent_channel_widths_rejected():
    data = base_problem()
    data["plant"]["D"]["zw"] = [[0.0, 0.0]]  # claims w has width 2
    with pytest.raises(ValueError, match="inconsistent widths"):
        parse_problem(data)


def test_physical_round_trip():
    data = base_problem()
    data["uncertainty"]["ranges"] = [[0.0, 4.0]]
    prob = parse_problem(data)
    assert_allclose(prob.to_physical([-1.0]), [0.0])
    assert_allclose(prob.to_physical([1.0]), [4.0])
    assert_allclose(prob.to_physical([0.0]), [2.0])
    for d in (-1.0, -0.2, 0.7):
        assert_allclose(prob.from_physical(prob.to_physical([d])), [d], atol=1e-12)


def test_kappa0_length_checked():
    data = base_problem()
    data["controller"]["kappa0"] = [0.1, 0.2]
    with pytest.raises(ValueError, match="kappa0 has 2 entries"):
        parse_problem(data)
    data["controller"]["kappa0"] = [0.3]
    prob = parse_problem(data)
    assert_allclose(prob.kappa0, [0.3])


def test_problem_file_defaults_to_unit_box():
    data = base_problem()
    prob = parse_problem(data)
    assert_allclose(prob.physical_ranges, [[-1.0, 1.0]])
    assert_allclose(prob.range_center, [0.0])
    assert_allclose(prob.range_scale, [1.0])
