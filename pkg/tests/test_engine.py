import numpy as np
import pytest

from rydsqueeze.engine import (
    EnsembleSpec,
    TrajectoryState,
    apply_noise,
    block_rng,
    channel_rates,
    echo_pulse,
    run_ensemble,
    sample_initial,
    step_trajectory,
)
from rydsqueeze.errors import InvalidSpecError
from rydsqueeze.lattice import CouplingMatrix, LatticeSpec, PotentialSpec, coupling_matrix
from rydsqueeze.models import DissipationSpec, ModelSpec
from rydsqueeze.oracle import ising_closed_form


def test_sample_z_axis(rng):
    st = sample_initial(7, "z", rng, size=4000)
    assert st.spins.shape == (4000, 7, 3)
    assert np.all(st.spins[..., 2] == 0.5)
    assert set(np.unique(st.spins[..., :2])) == {-0.5, 0.5}
    assert abs(st.spins[..., 0].mean()) < 0.02
    np.testing.assert_allclose((st.spins**2).sum(-1), 0.75)


def test_sample_x_axis(rng):
    st = sample_initial(3, "x", rng)
    assert st.spins.shape == (3, 3)
    assert np.all(st.spins[:, 0] == 0.5)
    assert set(np.abs(st.spins[:, 1:]).ravel()) == {0.5}


def test_ensemble_spec_validation():
    with pytest.raises(InvalidSpecError):
        EnsembleSpec(n_traj=0)
    with pytest.raises(InvalidSpecError):
        EnsembleSpec(dt=-1)
    with pytest.raises(InvalidSpecError):
        EnsembleSpec(initial_axis="w")


def test_grid():
    ens = EnsembleSpec(dt=0.1, t_max=1.0, sample_stride=2)
    np.testing.assert_allclose(ens.times, [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert EnsembleSpec(n_traj=1001, block_size=250).blocks()[-1] == (4, 1)


def test_free_spin_unchanged(rng):
    st = sample_initial(1, "z", rng)
    out = step_trajectory(st, ModelSpec("Ising"), CouplingMatrix.uniform(1), DissipationSpec(), 0.1, rng)
    np.testing.assert_array_equal(out.spins, st.spins)
    assert out.time == pytest.approx(0.1)


def test_larmor_precession_mean_field():
    b = 1.7
    ens = EnsembleSpec(n_traj=1, dt=0.01, t_max=2.0, initial_axis="z", initial_sampling="mean_field")
    series = run_ensemble(ModelSpec("LabFrameDriven", transverse_field=b), CouplingMatrix.uniform(1),
                          None, ens, bootstrap=False)
    np.testing.assert_allclose(series.mean[:, 2], 0.5 * np.cos(b * series.times), atol=1e-9)
    # a field along +x turns +z towards -y
    np.testing.assert_allclose(series.mean[:, 1], -0.5 * np.sin(b * series.times), atol=1e-9)


def test_larmor_precession_ensemble():
    b = 1.7
    ens = EnsembleSpec(n_traj=4000, dt=0.01, t_max=2.0, initial_axis="z", sample_stride=10)
    series = run_ensemble(ModelSpec("LabFrameDriven", transverse_field=b), CouplingMatrix.uniform(1),
                          None, ens, bootstrap=False)
    expected = 0.5 * np.cos(b * series.times)
    assert np.all(np.abs(series.mean[:, 2] - expected) <= 3 * series.mean_err[:, 2] + 1e-12)


def test_z_dephasing_calibration():
    gamma = 0.8
    ens = EnsembleSpec(n_traj=40000, dt=0.01, t_max=2.0, initial_axis="x", sample_stride=20, master_seed=5)
    series = run_ensemble(ModelSpec("Ising"), CouplingMatrix.uniform(1), DissipationSpec(0.0, gamma), ens,
                          bootstrap=False)
    expected = 0.5 * np.exp(-gamma * series.times / 2)
    assert np.all(np.abs(series.mean[:, 0] - expected) <= 3 * series.mean_err[:, 0] + 1e-12)


def test_noise_is_isometry(rng):
    spins = rng.normal(size=(200, 5, 3))
    out = apply_noise(spins, (0.3, 0.2, 0.9), 0.05, rng, debug=True)
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), np.linalg.norm(spins, axis=-1), rtol=1e-13)


def test_lab_frame_decay_rejected():
    with pytest.raises(InvalidSpecError):
        channel_rates(ModelSpec("LabFrameDriven", transverse_field=1.0), DissipationSpec(0.0, 0.1))
    with pytest.raises(InvalidSpecError):
        channel_rates(ModelSpec("Ising"), DissipationSpec(0.1, 0.0))
    assert channel_rates(ModelSpec("XX_RWA"), DissipationSpec(0.2, 0.0)) == (0.2, 0.1, 0.1)


def test_echo_pulse_map():
    np.testing.assert_array_equal(echo_pulse([0.1, 0.2, 0.3]), [0.1, -0.2, -0.3])


def test_two_spin_xx_against_analytic():
    # 4x4 diagonalisation gives <S_z>(t) = cos(J t / 4) from |up, up>; compared
    # over J t <= 3, beyond which the truncation error of two classical spins dominates
    cm = CouplingMatrix.from_matrix([[0, 1], [1, 0]])
    ens = EnsembleSpec(n_traj=10000, dt=0.02, t_max=3.0, sample_stride=10, master_seed=11)
    series = run_ensemble(ModelSpec("XX_RWA"), cm, None, ens)
    expected = np.cos(series.times / 4)
    assert np.all(np.abs(series.mean[:, 2] - expected) <= 3 * series.mean_err[:, 2] + 1e-12)


def test_initial_collective_moments():
    n = 6
    ens = EnsembleSpec(n_traj=20000, dt=0.02, t_max=0.02, master_seed=2)
    series = run_ensemble(ModelSpec("XX_RWA"), CouplingMatrix.uniform(n), None, ens, bootstrap=False)
    assert series.mean[0, 2] == n / 2
    # per-trajectory variance of S_x is N/4, so the sample mean of S_x^2 has a few-percent spread
    assert series.s2[0] == pytest.approx((n / 2) * (n / 2 + 1), rel=0.02)


def test_ising_conserves_sz_per_trajectory(rng):
    cm = coupling_matrix(LatticeSpec.square(3), PotentialSpec("soft-core-vdw", 1.5))
    st = sample_initial(9, "x", rng, size=50)
    sz0 = st.spins[..., 2].copy()
    for _ in range(100):
        st = step_trajectory(st, ModelSpec("Ising", include_longitudinal=True), cm, None, 0.02, rng)
    np.testing.assert_array_equal(st.spins[..., 2], sz0)


def test_mean_field_hook_precesses():
    cm = coupling_matrix(LatticeSpec.chain(4), PotentialSpec("sharp-cutoff", 1.0))
    ens = EnsembleSpec(n_traj=1, dt=0.01, t_max=1.0, initial_axis="x", initial_sampling="mean_field")
    rng = block_rng(0, 0)
    st = sample_initial(4, "x", rng, sampling="mean_field")
    model = ModelSpec("Ising", include_longitudinal=True)
    for _ in range(ens.n_steps):
        st = step_trajectory(st, model, cm, None, ens.dt, rng)
    np.testing.assert_allclose(st.spins[:, 0], 0.5 * np.cos(cm.b_parallel * 1.0), atol=1e-12)
    np.testing.assert_allclose(st.spins[:, 1], 0.5 * np.sin(cm.b_parallel * 1.0), atol=1e-12)


def test_echo_cancels_longitudinal_field():
    cm = coupling_matrix(LatticeSpec.chain(4), PotentialSpec("soft-core-vdw", 1.5))
    ens = EnsembleSpec(n_traj=20000, dt=0.02, t_max=2.0, initial_axis="x", master_seed=9)
    driven = run_ensemble(ModelSpec("LabFrameDriven", transverse_field=0.0, echo_pulse=True), cm, None, ens,
                          bootstrap=False)
    assert driven.metadata["diagnostics"].echo_time == pytest.approx(1.0)
    exact = ising_closed_form(cm, times=[ens.t_max], initial_axis="x")
    # the pulse flips y and z, so the echoed S_x matches the field-free one
    assert abs(driven.mean[-1, 0] - exact.mean[-1, 0]) <= 3 * driven.mean_err[-1, 0]


def test_echo_removes_single_spin_phase():
    rng = block_rng(1, 0)
    st = TrajectoryState(np.array([[0.5, 0.0, 0.0]]))
    delta = 0.9
    cm = CouplingMatrix.uniform(1)
    model = ModelSpec("LabFrameDriven", transverse_field=0.0)
    # a bare detuning enters through the compensation term; emulate it with a manual z rotation
    for k in range(100):
        if k == 50:
            st = TrajectoryState(echo_pulse(st.spins), st.time)
        phi = delta * 0.01
        c, s = np.cos(phi), np.sin(phi)
        x, y = st.spins[0, 0], st.spins[0, 1]
        st = TrajectoryState(np.array([[c * x - s * y, s * x + c * y, st.spins[0, 2]]]), st.time + 0.01)
        st = step_trajectory(st, model, cm, None, 0.01, rng)
    np.testing.assert_allclose(st.spins[0], [0.5, 0.0, 0.0], atol=1e-12)


def test_determinism_across_workers():
    cm = coupling_matrix(LatticeSpec.chain(5), PotentialSpec("soft-core-vdw", 1.5))
    ens = EnsembleSpec(n_traj=700, dt=0.02, t_max=0.6, block_size=100, master_seed=77)
    diss = DissipationSpec(0.1, 0.05)
    a = run_ensemble(ModelSpec("XX_RWA"), cm, diss, ens, workers=1)
    b = run_ensemble(ModelSpec("XX_RWA"), cm, diss, ens, workers=3)
    for name in ("mean", "second", "mean_err", "xi2_err"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_seed_changes_result():
    cm = CouplingMatrix.uniform(3)
    a = run_ensemble(ModelSpec("XX_RWA"), cm, None, EnsembleSpec(n_traj=100, t_max=0.2, master_seed=1))
    b = run_ensemble(ModelSpec("XX_RWA"), cm, None, EnsembleSpec(n_traj=100, t_max=0.2, master_seed=2))
    assert not np.array_equal(a.second, b.second)


def test_large_step_warns():
    cm = CouplingMatrix.uniform(2, 1.0)
    with pytest.warns(RuntimeWarning, match="reduce dt"):
        run_ensemble(ModelSpec("LabFrameDriven", transverse_field=50.0), cm, None,
                     EnsembleSpec(n_traj=4, dt=0.02, t_max=0.04), bootstrap=False)


def test_unknown_estimator():
    with pytest.raises(InvalidSpecError):
        run_ensemble(ModelSpec("XX_RWA"), CouplingMatrix.uniform(2), None, EnsembleSpec(n_traj=2),
                     estimator="median")


def test_diagnostics_and_bootstrap():
    cm = coupling_matrix(LatticeSpec.chain(6), PotentialSpec("sharp-cutoff", 2.0))
    series = run_ensemble(ModelSpec("XX_RWA"), cm, None, EnsembleSpec(n_traj=500, t_max=1.0))
    diag = series.metadata["diagnostics"]
    assert diag.max_norm_deviation <= 1e-8
    assert diag.max_energy_rel <= 1e-6
    assert series.xi2_err[0] >= 0 and np.all(series.xi2_err[1:] > 0)


def test_diagonal_corrected_estimator_exact_at_start():
    n = 4
    series = run_ensemble(ModelSpec("XX_RWA"), CouplingMatrix.uniform(n), None, EnsembleSpec(n_traj=300, t_max=0.1),
                          estimator="diagonal_corrected", bootstrap=False)
    assert series.second[0, 2, 2] == n**2 / 4
