import json

import numpy as np
import pytest

import rbainv as rb
from rbainv.rba import FitConfig, PoleCollisionError, RationalApproximant


def test_time_channels_validation():
    with pytest.raises(ValueError):
        rb.TimeChannels(np.array([1e-3, 1e-4]))
    with pytest.raises(ValueError):
        rb.TimeChannels(np.array([-1.0, 1.0]))
    ch = rb.TimeChannels.logspaced(1e-6, 1e-3, 31)
    assert ch.count == 31
    assert ch.times[0] == pytest.approx(1e-6)


def test_eval_scalar_single_pole_pure_imaginary():
    # 2 Re(1 / (0 - i)) = 2 Re(i) = 0
    ap = RationalApproximant(poles=np.array([1j]), residues=np.array([[1.0 + 0j]]),
                             spectral_interval=(0.0, 1.0), fit_error=np.inf,
                             channels=rb.TimeChannels(np.array([1.0])))
    assert rb.eval_scalar(ap, 0.0, 0) == pytest.approx(0.0, abs=1e-15)


def test_eval_scalar_single_pole_shifted():
    # pole 1+i at x=1: 2 Re(1 / (-i)) = 0
    ap = RationalApproximant(poles=np.array([1.0 + 1j]), residues=np.array([[1.0 + 0j]]),
                             spectral_interval=(0.0, 2.0), fit_error=np.inf,
                             channels=rb.TimeChannels(np.array([1.0])))
    assert rb.eval_scalar(ap, 1.0, 0) == pytest.approx(0.0, abs=1e-15)


def test_eval_is_real_and_matches_conjugate_pair_sum():
    rng = np.random.default_rng(0)
    poles = np.array([-3.0 + 2j, 1.0 + 5j])
    residues = (rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3)))
    ap = RationalApproximant(poles=poles, residues=residues,
                             spectral_interval=(0.0, 10.0), fit_error=np.inf,
                             channels=rb.TimeChannels(np.array([1.0, 2.0, 3.0])))
    x = rng.uniform(0, 10, 20)
    vals = ap.eval(x)
    assert vals.dtype == np.float64
    # explicit sum over the full conjugate-closed pole set
    full_poles = np.concatenate([poles, poles.conj()])
    full_res = np.vstack([residues, residues.conj()])
    explicit = np.real((1.0 / (x[:, None] - full_poles[None, :])) @ full_res)
    np.testing.assert_allclose(vals, explicit, rtol=1e-13)


def test_pole_admissibility_enforced():
    with pytest.raises(ValueError):
        RationalApproximant(poles=np.array([1.0 + 0j]), residues=np.array([[1.0 + 0j]]),
                            spectral_interval=(0.0, 1.0), fit_error=0.0,
                            channels=rb.TimeChannels(np.array([1.0])))


def test_duplicate_poles_rejected():
    with pytest.raises(PoleCollisionError):
        RationalApproximant(poles=np.array([1j, 1j]),
                            residues=np.zeros((2, 1), complex),
                            spectral_interval=(0.0, 1.0), fit_error=0.0,
                            channels=rb.TimeChannels(np.array([1.0])))


def test_single_pole_near_constant_channel():
    # on [0, 1e-6/t1] the target is constant to 1e-6; one pole is plenty
    t1 = 2.0
    ch = rb.TimeChannels(np.array([t1]))
    ap = rb.fit_common_pole(ch, (0.0, 1e-6 / t1), 1)
    assert ap.fit_error < 1e-3


def test_fit_value_at_zero_within_fit_error(acc_approx):
    for j in range(acc_approx.channels.count):
        assert abs(rb.eval_scalar(acc_approx, 0.0, j) - 1.0) <= acc_approx.fit_error


def test_fit_random_points_bounded_by_fit_error(acc_approx):
    rng = np.random.default_rng(3)
    x = rng.uniform(*acc_approx.spectral_interval, 200)
    got = acc_approx.eval(x)
    target = np.exp(-np.outer(x, acc_approx.channels.times))
    # random points fall between validation nodes; allow a hair of slack
    assert np.max(np.abs(got - target)) <= 1.05 * acc_approx.fit_error + 1e-14


def test_pole_sweep_monotone(channels31):
    cfg = FitConfig(n_log=300, n_lin=300)
    fits = rb.fit_pole_sweep(channels31, (0.0, 1.1e5), range(8, 22), cfg)
    errs = [f.fit_error for f in fits]
    assert all(f.pole_count == m for f, m in zip(fits, range(8, 22)))
    assert all(errs[i + 1] <= errs[i] for i in range(len(errs) - 1)), errs
    assert errs[0] < 1e-2


def test_validate_fit_refined_grid(acc_approx):
    report = rb.validate_fit(acc_approx, 4001)
    assert report.max_abs <= 2.0 * acc_approx.fit_error
    assert report.per_channel_max_abs.shape == (31,)
    assert np.all(report.per_channel_max_abs <= report.max_abs)


def test_validate_fit_empty_channels():
    ap = RationalApproximant(poles=np.array([1j]), residues=np.zeros((1, 0), complex),
                             spectral_interval=(0.0, 1.0), fit_error=0.0,
                             channels=rb.TimeChannels(np.array([])))
    report = rb.validate_fit(ap, 100)
    assert report.max_abs == 0.0
    assert report.per_channel_max_abs.size == 0


def test_validate_fit_monotone_in_grid_size(acc_approx):
    coarse = rb.validate_fit(acc_approx, 10)
    fine = rb.validate_fit(acc_approx, 10000)
    assert fine.max_abs >= coarse.max_abs * (1.0 - 1e-12)


def test_validate_fit_grid_size_precondition(acc_approx):
    with pytest.raises(ValueError):
        rb.validate_fit(acc_approx, 9)


def test_nonconvergence_reports_best_iterate(channels31):
    ap = rb.fit_common_pole(channels31, (0.0, 1e5), 6, FitConfig(max_iters=1,
                                                                 n_log=200, n_lin=200))
    assert not ap.converged
    assert ap.iterations == 1
    assert np.isfinite(ap.fit_error)


def test_no_per_channel_pole_work(channels31):
    few = rb.TimeChannels.logspaced(1e-6, 1e-3, 3)
    cfg = FitConfig(max_iters=5, n_log=200, n_lin=200)
    a = rb.fit_common_pole(few, (0.0, 1e5), 6, cfg)
    b = rb.fit_common_pole(channels31, (0.0, 1e5), 6, cfg)
    # one relocation per iteration regardless of channel count, one residue batch
    assert a.stats.pole_relocations == a.stats.iterations
    assert b.stats.pole_relocations == b.stats.iterations
    assert a.stats.residue_batches == b.stats.residue_batches == 1


def test_refit_residues_keeps_poles(acc_approx):
    doubled = rb.TimeChannels.logspaced(1e-6, 1e-3, 62)
    re = rb.refit_residues(acc_approx, doubled)
    assert np.array_equal(re.poles, acc_approx.poles)
    assert re.residues.shape == (acc_approx.pole_count, 62)
    assert re.fit_error < 100 * acc_approx.fit_error


def test_serialization_roundtrip(tmp_path, acc_approx):
    path = tmp_path / "approx.json"
    rb.save_approximant(acc_approx, path)
    with open(path) as fh:
        doc = json.load(fh)
    assert set(doc) == {"times", "poles", "residues", "interval", "fit_error"}
    assert len(doc["residues"]) == acc_approx.channels.count
    assert len(doc["residues"][0]) == acc_approx.pole_count
    back = rb.load_approximant(path)
    np.testing.assert_array_equal(back.poles, acc_approx.poles)
    np.testing.assert_array_equal(back.residues, acc_approx.residues)
    np.testing.assert_array_equal(back.channels.times, acc_approx.channels.times)
    assert back.fit_error == acc_approx.fit_error


def test_relative_weighting_flag(channels31):
    cfg = FitConfig(n_log=200, n_lin=200, relative_weighting=True, max_iters=20)
    ap = rb.fit_common_pole(channels31, (0.0, 1e5), 10, cfg)
    assert np.isfinite(ap.fit_error)
    assert ap.fit_error < 1e-2


def test_fit_preconditions(channels31):
    with pytest.raises(ValueError):
        rb.fit_common_pole(channels31, (0.0, 1e5), 0)
    with pytest.raises(ValueError):
        rb.fit_common_pole(channels31, (-1.0, 1e5), 4)
    with pytest.raises(ValueError):
        rb.fit_common_pole(rb.TimeChannels(np.array([])), (0.0, 1e5), 4)
