import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import random_plant, toy_static_plant
from robsyn.exceptions import AlgebraicLoopError, DimensionError, WellPosednessError
from robsyn.lft import (
    ControllerStructure,
    PartitionedSystem,
    Plant,
    StateSpace,
    UncertaintyStructure,
    build_delta_matrix,
    close_controller,
    close_lower,
    close_uncertainty,
    close_upper,
    closed_loop_a,
    realize_controller,
    star_product,
    two_port_static,
)


def random_partitioned(rng, n=3, dims=(2, 2, 2, 2), stable=True):
    in1, in2, out1, out2 = dims
    A = rng.normal(size=(n, n))
    if stable:
        A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
    sys = StateSpace(
        A,
        rng.normal(size=(n, in1 + in2)),
        rng.normal(size=(out1 + out2, n)),
        0.3 * rng.normal(size=(out1 + out2, in1 + in2)),
    )
    return PartitionedSystem(sys, in1, in2, out1, out2)


# ---------------------------------------------------------------------------
# StateSpace


def test_state_space_shapes_and_poles():
    sys = StateSpace([[0, 1], [-2, -3]], [[0], [1]], [[1, 0]], [[0]])
    assert sys.n_states == 2 and sys.n_inputs == 1 and sys.n_outputs == 1
    assert_allclose(sorted(sys.poles().real), [-2.0, -1.0], atol=1e-12)


def test_state_space_frequency_response():
    # G(s) = 1/(s+1): |G(j)| = 1/sqrt(2), G(inf) = D
    sys = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.25]])
    resp = sys.freq_response(1.0)
    assert_allclose(resp, 0.25 + 1.0 / (1j + 1.0), rtol=1e-14)
    assert_allclose(sys.freq_response(np.inf), [[0.25]], rtol=0, atol=0)


def test_static_state_space():
    sys = StateSpace.static([[2.0, 0.0]])
    assert sys.is_static and sys.n_states == 0
    assert_allclose(sys.freq_response(3.7), [[2.0, 0.0]])
    assert sys.poles().size == 0


def test_state_space_rejects_mismatched_blocks():
    with pytest.raises(DimensionError):
        StateSpace(np.zeros((2, 2)), np.zeros((3, 1)), np.zeros((1, 2)), np.zeros((1, 1)))


# ---------------------------------------------------------------------------
# Star product and channel closures


def test_close_upper_matches_frequency_formula():
    rng = np.random.default_rng(3)
    ps = random_partitioned(rng)
    block = StateSpace.static(0.4 * rng.normal(size=(ps.in1, ps.out1)))
    closed = close_upper(ps, block)
    for w in (0.0, 0.3, 2.1):
        T11, T12, T21, T22 = ps.freq_blocks(w)
        J = block.D
        ref = T22 + T21 @ J @ np.linalg.solve(np.eye(ps.in1) - T11 @ J, T12)
        assert_allclose(closed.freq_response(w), ref, rtol=0, atol=1e-11)


def test_close_lower_matches_frequency_formula():
    rng = np.random.default_rng(4)
    ps = random_partitioned(rng)
    block = StateSpace.static(0.4 * rng.normal(size=(ps.in2, ps.out2)))
    closed = close_lower(ps, block)
    for w in (0.0, 1.0, 5.0):
        T11, T12, T21, T22 = ps.freq_blocks(w)
        J = block.D
        ref = T11 + T12 @ J @ np.linalg.solve(np.eye(ps.in2) - T22 @ J, T21)
        assert_allclose(closed.freq_response(w), ref, rtol=0, atol=1e-11)


def test_close_with_dynamic_block():
    # Closing with a dynamic block stacks states; check against frequency data.
    rng = np.random.default_rng(5)
    ps = random_partitioned(rng)
    blk_sys = StateSpace(
        [[-2.0, 0.0], [0.0, -3.0]],
        rng.normal(size=(2, ps.out1)),
        rng.normal(size=(ps.in1, 2)),
        0.2 * rng.normal(size=(ps.in1, ps.out1)),
    )
    closed = close_upper(ps, blk_sys)
    assert closed.n_states == ps.sys.n_states + 2
    for w in (0.0, 0.7):
        T11, T12, T21, T22 = ps.freq_blocks(w)
        J = blk_sys.freq_response(w)
        ref = T22 + T21 @ J @ np.linalg.solve(np.eye(ps.in1) - T11 @ J, T12)
        assert_allclose(closed.freq_response(w), ref, rtol=0, atol=1e-11)


def test_star_product_associates_with_closure():
    # Closing the chained system in one step or two must agree.
    rng = np.random.default_rng(6)
    top = random_partitioned(rng, n=2, dims=(2, 3, 2, 3))
    bottom = random_partitioned(rng, n=3, dims=(3, 1, 3, 2))
    chained = star_product(top, bottom)
    gain = StateSpace.static(0.3 * rng.normal(size=(bottom.in2, bottom.out2)))
    once = close_lower(chained, gain)
    inner = close_lower(bottom, gain)
    for w in (0.0, 0.9, 4.2):
        T = once.freq_response(w)
        # manual: close bottom first, then use it to close top's lower channel
        Jb = inner.freq_response(w)
        T11, T12, T21, T22 = top.freq_blocks(w)
        ref = T11 + T12 @ Jb @ np.linalg.solve(np.eye(top.in2) - T22 @ Jb, T21)
        assert_allclose(T, close_lower(top, inner).freq_response(w), rtol=0, atol=1e-10)
        assert_allclose(T, ref, rtol=0, atol=1e-10)


def test_algebraic_loop_is_detected():
    ps = PartitionedSystem(StateSpace.static(np.ones((2, 2))), 1, 1, 1, 1)
    with pytest.raises(AlgebraicLoopError):
        close_upper(ps, StateSpace.static([[1.0]]))


def test_two_port_static_layout():
    tp = two_port_static([[1.0]], [[2.0]], [[3.0]], [[4.0]])
    assert_allclose(tp.D11, [[1.0]])
    assert_allclose(tp.D12, [[2.0]])
    assert_allclose(tp.D21, [[3.0]])
    assert_allclose(tp.D22, [[4.0]])


# ---------------------------------------------------------------------------
# Uncertainty structure


def test_uncertainty_structure_expand_and_slices():
    s = UncertaintyStructure([2, 1, 3])
    assert s.n_params == 3 and s.n_delta == 6
    assert_allclose(s.expand([1.0, 2.0, 3.0]), [1, 1, 2, 3, 3, 3])
    assert [sl.stop - sl.start for sl in s.block_slices] == [2, 1, 3]
    delta = np.array([0.1, -0.5, 0.9])
    assert_allclose(np.diag(build_delta_matrix(s, delta)), s.expand(delta))


def test_check_delta_rejects_wrong_length():
    s = UncertaintyStructure([1, 1])
    with pytest.raises(DimensionError):
        s.check_delta(np.zeros(3))


def test_uncertainty_structure_rejects_bad_blocks():
    with pytest.raises(ValueError):
        UncertaintyStructure([1, 0])
    with pytest.raises(ValueError):
        UncertaintyStructure([])


# ---------------------------------------------------------------------------
# Controller structures


def test_full_order_packing_roundtrip():
    cs = ControllerStructure.full_order(2, 1, 1)
    assert cs.n_params == (2 + 1) * (2 + 1)
    kappa = np.arange(1.0, cs.n_params + 1)
    K = cs.kmat(kappa)
    assert K.shape == (3, 3)
    # per-block row-major packing: A, then B, C, D
    assert_allclose(K, [[1.0, 2.0, 5.0], [3.0, 4.0, 6.0], [7.0, 8.0, 9.0]])
    assert_allclose(cs.grad_to_kappa(np.eye(3)), [1, 0, 0, 1, 0, 0, 0, 0, 1])


def test_grad_to_kappa_is_adjoint_of_kmat():
    rng = np.random.default_rng(11)
    for cs in (
        ControllerStructure.full_order(2, 2, 1),
        ControllerStructure.static_gain(2, 2),
        ControllerStructure.tridiagonal(3, 1, 1),
        ControllerStructure.pid(),
    ):
        base = cs.kmat(np.zeros(cs.n_params))
        for _ in range(5):
            kappa = rng.normal(size=cs.n_params)
            G = rng.normal(size=base.shape)
            lhs = float(np.sum(G * (cs.kmat(kappa) - base)))
            rhs = float(cs.grad_to_kappa(G) @ kappa)
            assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(lhs))


def test_static_gain_structure():
    cs = ControllerStructure.static_gain(2, 3)
    assert cs.n_states == 0 and cs.n_params == 6
    K = realize_controller(cs, np.arange(1.0, 7.0))
    assert K.is_static
    assert_allclose(K.D, np.arange(1.0, 7.0).reshape(3, 2))


def test_pid_structure_realizes_filtered_derivative():
    cs = ControllerStructure.pid(filter_time_constant=0.1)
    # two states: integrator plus filter pole at -1/tau
    kappa = np.zeros(cs.n_params)
    K = realize_controller(cs, kappa)
    assert K.n_states == 2
    assert_allclose(np.sort(K.A.diagonal()), [-10.0, 0.0])


def test_tridiagonal_counts():
    cs = ControllerStructure.tridiagonal(4, 1, 1)
    # tridiagonal A (4 + 3 + 3) + B (4) + C (4) + D (1)
    assert cs.n_params == 10 + 4 + 4 + 1


# ---------------------------------------------------------------------------
# Plant views and closures


def test_plant_views_partition_consistently():
    rng = np.random.default_rng(12)
    plant, structure = random_plant(rng)
    cv = plant.control_view()
    uv = plant.uncertainty_view()
    # control view: channel 1 = (w, z) goes with performance + uncertainty;
    # both views expose one full copy of the plant
    assert cv.sys.n_states == plant.n_states
    assert uv.sys.n_states == plant.n_states
    assert uv.in1 == structure.n_delta
    assert cv.in2 == plant.n_ctrl_in and cv.out2 == plant.n_meas_out


def test_close_controller_static_gain_state_matrix():
    rng = np.random.default_rng(13)
    plant, structure = random_plant(rng)
    ny, nu = plant.n_meas_out, plant.n_ctrl_in
    K = StateSpace.static(0.3 * rng.normal(size=(nu, ny)))
    M = close_controller(plant, K)
    n, nd = plant.n_states, structure.n_delta
    full = plant.sys
    Bu = full.B[:, nd + plant.n_perf_in:]
    Cy = full.C[nd + plant.n_perf_out:, :]
    # D_yu = 0 in random_plant, so the closed A has no loop inverse
    assert_allclose(M.AA, full.A + Bu @ K.D @ Cy, rtol=0, atol=1e-12)
    assert M.n_delta == nd


def test_close_uncertainty_matches_block_formulas():
    rng = np.random.default_rng(14)
    plant, structure = random_plant(rng)
    K = StateSpace.static(0.2 * rng.normal(size=(plant.n_ctrl_in, plant.n_meas_out)))
    M = close_controller(plant, K)
    delta = rng.uniform(-1.0, 1.0, size=structure.n_params)
    channels = close_uncertainty(M, structure, delta)
    Dm = build_delta_matrix(structure, delta)
    for w in (0.0, 0.8):
        blocks = PartitionedSystem(
            StateSpace(M.AA, np.hstack([M.Bp, M.Bw]), np.vstack([M.Cq, M.Cz]),
                       np.block([[M.Dqp, M.Dqw], [M.Dzp, M.Dzw]])),
            M.Dqp.shape[1], M.Dqw.shape[1], M.Dqp.shape[0], M.Dzp.shape[0],
        ).freq_blocks(w)
        Mqp, Mqw, Mzp, Mzw = blocks
        E = np.linalg.inv(np.eye(Mqp.shape[0]) - Mqp @ Dm)
        assert_allclose(channels.t_qw.freq_response(w), E @ Mqw, rtol=0, atol=1e-10)
        assert_allclose(channels.t_zp.freq_response(w), Mzp @ np.linalg.inv(np.eye(Dm.shape[0]) - Dm @ Mqp), rtol=0, atol=1e-10)
        assert_allclose(channels.t_zw.freq_response(w), Mzw + Mzp @ Dm @ E @ Mqw, rtol=0, atol=1e-10)


def test_closed_loop_a_explicit_formula():
    rng = np.random.default_rng(15)
    plant, structure = random_plant(rng)
    K = StateSpace.static(np.zeros((plant.n_ctrl_in, plant.n_meas_out)))
    M = close_controller(plant, K)
    delta = rng.uniform(-1.0, 1.0, size=structure.n_params)
    Dm = build_delta_matrix(structure, delta)
    A = closed_loop_a(M, structure, delta)
    X = np.linalg.solve(np.eye(Dm.shape[0]) - M.Dqp @ Dm, M.Cq)
    assert_allclose(A, M.AA + M.Bp @ Dm @ X, rtol=0, atol=1e-12)


def test_closed_loop_a_singular_loop_raises():
    # Dqp = I, delta = 1 makes I - Dqp*Delta singular
    plant, structure, _ = toy_static_plant()
    sys = StateSpace(
        np.array([[-1.0]]),
        np.array([[1.0, 0.0]]),
        np.array([[1.0], [0.0]]),
        np.array([[1.0, 0.0], [0.0, 0.0]]),
    )
    from robsyn.lft import UncertainClosedLoop

    M = UncertainClosedLoop(PartitionedSystem(sys, 1, 1, 1, 1))
    with pytest.raises(WellPosednessError):
        closed_loop_a(M, UncertaintyStructure([1]), np.array([1.0]))


def test_commutation_of_closures():
    # closing uncertainty then controller equals controller then uncertainty
    rng = np.random.default_rng(16)
    for _ in range(6):
        plant, structure = random_plant(rng)
        delta = rng.uniform(-1.0, 1.0, size=structure.n_params)
        K = StateSpace.static(0.2 * rng.normal(size=(plant.n_ctrl_in, plant.n_meas_out)))
        Dm = build_delta_matrix(structure, delta)

        # controller first
        M = close_controller(plant, K)
        t_zw_a = close_uncertainty(M, structure, delta).t_zw

        # uncertainty first: close channel 1 of the uncertainty view, then
        # the controller channel of what remains
        uv = plant.uncertainty_view()
        after_delta = close_upper(uv, StateSpace.static(Dm))
        remaining = PartitionedSystem(
            after_delta, plant.n_perf_in, plant.n_ctrl_in, plant.n_perf_out, plant.n_meas_out
        )
        t_zw_b = close_lower(remaining, K)

        for w in (0.0, 0.4, 2.5):
            assert_allclose(
                t_zw_a.freq_response(w), t_zw_b.freq_response(w), rtol=0, atol=1e-10
            )


def test_toy_static_plant_closed_loop_value():
    plant, structure, cs = toy_static_plant()
    for kappa, delta in ((0.0, 0.3), (0.5, -1.0), (-2.0, 1.0)):
        K = realize_controller(cs, np.array([kappa]))
        M = close_controller(plant, K)
        t_zw = close_uncertainty(M, structure, np.array([delta])).t_zw
        assert_allclose(t_zw.freq_response(0.0), [[delta - kappa]], rtol=0, atol=1e-14)
