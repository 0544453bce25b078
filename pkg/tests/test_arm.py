"""Target statistics, perturbation, and the reconciliation losses."""

import math

import numpy as np
import pytest

from farnet.arm import (
    RunningTargetStats,
    TargetStats,
    estimate_target_stats,
    loss_arm,
    loss_pi,
    loss_res,
    loss_total,
    perturb,
    retrieval_loss,
)
from farnet.numerics import Rng, ShapeError, Tape, Tensor
from conftest import orthonormal_rows
from gradcheck import check_gradients, finite_difference_grad, max_rel_err


def _rand(shape, seed):
    return np.random.default_rng(seed).normal(0.0, 1.0, shape)


def _unit_rows(shape, seed):
    x = _rand(shape, seed)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# statistics


def test_stats_of_zeros():
    stats = estimate_target_stats(Tensor(np.zeros((3, 4))))
    assert stats.mu == 0.0 and stats.sigma == 0.0


def test_stats_two_point_symmetric():
    stats = estimate_target_stats(Tensor([[1.0, -1.0]]))
    assert stats.mu == 0.0 and stats.sigma == 1.0


def test_stats_match_two_pass_oracle():
    v = _rand((8, 16), 1)
    stats = estimate_target_stats(Tensor(v))
    flat = v.reshape(-1)
    mu = sum(flat) / flat.size
    var = sum((x - mu) ** 2 for x in flat) / flat.size
    assert abs(stats.mu - mu) <= 1e-12
    assert abs(stats.sigma - math.sqrt(var)) <= 1e-12


def test_stats_reject_empty_batch():
    with pytest.raises(ShapeError):
        estimate_target_stats(Tensor(np.zeros((0, 4))))


def test_running_stats_first_batch_equals_per_batch():
    v = _rand((4, 8), 2)
    running = RunningTargetStats().update(v)
    direct = estimate_target_stats(Tensor(v))
    assert abs(running.mu - direct.mu) <= 1e-12
    assert abs(running.sigma - direct.sigma) <= 1e-12


def test_running_stats_accumulate_across_batches():
    a, b = _rand((4, 8), 3), _rand((4, 8), 4)
    tracker = RunningTargetStats()
    tracker.update(a)
    got = tracker.update(b)
    combined = estimate_target_stats(Tensor(np.concatenate([a, b])))
    assert abs(got.mu - combined.mu) <= 1e-12
    assert abs(got.sigma - combined.sigma) <= 1e-12


# ---------------------------------------------------------------------------
# perturbation


def test_perturb_with_zero_stats_is_identity_bitwise():
    v = Tensor(_rand((4, 8), 5))
    out = perturb(v, TargetStats(0.0, 0.0), Rng(1))
    assert np.array_equal(out.data, v.data)


def test_perturb_with_zero_sigma_is_constant_shift():
    v = Tensor(_rand((4, 8), 6))
    out = perturb(v, TargetStats(0.25, 0.0), Rng(1))
    assert np.array_equal(out.data, v.data + 0.25)


def test_perturb_is_deterministic_given_rng_state():
    v = Tensor(_rand((4, 8), 7))
    stats = TargetStats(0.1, 0.3)
    a = perturb(v, stats, Rng(9, stream=2))
    b = perturb(v, stats, Rng(9, stream=2))
    assert np.array_equal(a.data, b.data)


def test_perturb_monte_carlo_mean_converges_to_shifted_target():
    sigma, mu, reps = 0.1, 0.05, 100_000
    v = _rand((2, 4), 8)
    rng = Rng(31, stream=5)
    acc = np.zeros_like(v)
    for _ in range(reps):
        acc += perturb(Tensor(v), TargetStats(mu, sigma), rng).data
    mean = acc / reps
    # Var(alpha v + beta) = sigma^2 (v^2 + 1)
    bound = 5.0 * sigma * np.sqrt(v * v + 1.0) / math.sqrt(reps)
    assert (np.abs(mean - (v + mu)) <= bound).all()


def test_perturbation_noise_receives_no_gradient():
    # freeze one noise draw, then check grad(v) against finite differences
    v = Tensor(_unit_rows((3, 6), 9), requires_grad=True)
    u = Tensor(_unit_rows((3, 6), 10))
    stats = TargetStats(0.2, 0.4)

    def loss():
        v_hat = perturb(v, stats, Rng(77, stream=3))
        return retrieval_loss(u, v_hat, 0.5)

    worst = check_gradients(loss, {"v": v}, h=1e-6, tol=1e-5)
    assert worst <= 1e-5


# ---------------------------------------------------------------------------
# retrieval loss


def test_retrieval_loss_two_orthonormal_rows_closed_form():
    rows = orthonormal_rows(2, 6)
    got = retrieval_loss(Tensor(rows), Tensor(rows), 1.0, "in_batch").item()
    want = -math.log(math.e / (math.e + 1.0))
    assert abs(got - want) <= 1e-12


def test_retrieval_loss_uniform_rows_give_log_batch_in_both_modes():
    row = _unit_rows((1, 8), 11)
    u = Tensor(np.repeat(row, 4, axis=0))
    for mode in ("in_batch", "as_written"):
        got = retrieval_loss(u, Tensor(np.repeat(row, 4, axis=0)), 0.07, mode).item()
        assert abs(got - math.log(4)) <= 1e-9


def test_retrieval_loss_gradient_wrt_queries():
    u = Tensor(_unit_rows((3, 6), 12), requires_grad=True)
    v = Tensor(_unit_rows((3, 6), 13))

    def loss():
        return retrieval_loss(u, v, 0.5)

    worst = check_gradients(loss, {"u": u}, h=1e-6, tol=1e-5)
    assert worst <= 1e-5


def test_retrieval_loss_rejects_unknown_mode():
    rows = Tensor(_unit_rows((2, 4), 14))
    with pytest.raises(ValueError):
        retrieval_loss(rows, rows, 0.1, "everything")


# ---------------------------------------------------------------------------
# resilience loss


def test_loss_res_boundary_weights():
    u = Tensor(_unit_rows((3, 6), 15))
    v = Tensor(_unit_rows((3, 6), 16))
    v_hat = perturb(v, TargetStats(0.1, 0.2), Rng(5))
    clean = retrieval_loss(u, v, 0.2).item()
    assert loss_res(u, v, v_hat, 0.2, 1.0).item() == pytest.approx(clean, abs=1e-15)
    noisy = retrieval_loss(u, v_hat, 0.2).item()
    assert loss_res(u, v, v_hat, 0.2, 0.0).item() == pytest.approx(noisy, abs=1e-15)


def test_loss_res_degenerate_perturbation_matches_clean_loss():
    u = Tensor(_unit_rows((3, 6), 17))
    v = Tensor(_unit_rows((3, 6), 18))
    v_hat = perturb(v, TargetStats(0.0, 0.0), Rng(6))
    got = loss_res(u, v, v_hat, 0.2, 0.0).item()
    assert got == retrieval_loss(u, v, 0.2).item()


def test_loss_res_midpoint_is_arithmetic_mean():
    u = Tensor(_unit_rows((4, 6), 19))
    v = Tensor(_unit_rows((4, 6), 20))
    v_hat = perturb(v, TargetStats(0.05, 0.3), Rng(7))
    mid = loss_res(u, v, v_hat, 0.2, 0.5).item()
    mean = 0.5 * (retrieval_loss(u, v, 0.2).item()
                  + retrieval_loss(u, v_hat, 0.2).item())
    assert abs(mid - mean) <= 1e-12


def test_loss_res_is_affine_in_lambda2():
    u = Tensor(_unit_rows((4, 6), 21))
    v = Tensor(_unit_rows((4, 6), 22))
    v_hat = perturb(v, TargetStats(0.1, 0.25), Rng(8))
    at = {lam: loss_res(u, v, v_hat, 0.2, lam).item()
          for lam in (0.0, 0.25, 0.5, 0.75, 1.0)}
    for lam in (0.25, 0.5, 0.75):
        interp = at[0.0] + lam * (at[1.0] - at[0.0])
        assert abs(at[lam] - interp) <= 1e-9


# ---------------------------------------------------------------------------
# prompt-to-image loss


def test_loss_pi_closed_form_and_uniform_case():
    rows = orthonormal_rows(2, 6)
    got = loss_pi(Tensor(rows), Tensor(rows), 1.0).item()
    assert abs(got + math.log(math.e / (math.e + 1.0))) <= 1e-12
    row = _unit_rows((1, 8), 23)
    u_p = Tensor(np.repeat(row, 4, axis=0))
    assert abs(loss_pi(u_p, Tensor(np.repeat(row, 4, axis=0)), 0.07).item()
               - math.log(4)) <= 1e-9


# ---------------------------------------------------------------------------
# compositions


def test_loss_arm_and_total_recompose_from_parts():
    u = Tensor(_unit_rows((3, 6), 24))
    v = Tensor(_unit_rows((3, 6), 25))
    u_p = Tensor(_unit_rows((3, 6), 26))
    v_hat = perturb(v, TargetStats(0.02, 0.1), Rng(9))
    res = loss_res(u, v, v_hat, 0.2, 0.5)
    pi = loss_pi(u_p, v, 0.2)
    combined = loss_arm(res, pi).item()
    assert abs(combined - (res.item() + pi.item())) <= 1e-12
    esam_stub = Tensor(np.asarray(1.25))
    assert abs(loss_total(esam_stub, loss_arm(res, pi)).item()
               - (1.25 + combined)) <= 1e-12


def test_loss_arm_ablation_flags():
    u = Tensor(_unit_rows((3, 6), 27))
    v = Tensor(_unit_rows((3, 6), 28))
    u_p = Tensor(_unit_rows((3, 6), 29))
    v_hat = perturb(v, TargetStats(0.0, 0.1), Rng(10))
    res = loss_res(u, v, v_hat, 0.2, 0.5)
    pi = loss_pi(u_p, v, 0.2)
    assert loss_arm(res, None).item() == res.item()
    assert loss_arm(None, pi).item() == pi.item()
    assert loss_arm(None, None).item() == 0.0
