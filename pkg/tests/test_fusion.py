"""Fusion: residual norms, mean vs adaptive aggregation, diagnostics."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptfuse import (
    BranchPredictionError,
    BranchSet,
    FusionTrace,
    PromptEmbedding,
    attractor_denoiser,
    branch_predictions,
    constant_denoiser,
    default_condition_key,
    fuse_adaptive,
    fuse_mean,
    record_diagnostics,
    residual_norm_map,
    write_trace,
)


def _prompt(seed, length=4, dim=6):
    rng = np.random.default_rng(seed)
    return PromptEmbedding(rng.standard_normal((length, dim)).astype(np.float32))


def _random_branch_set(rng, n, shape=(4, 8, 8)):
    return BranchSet(
        eps_inv=rng.standard_normal(shape).astype(np.float32),
        eps=tuple(rng.standard_normal(shape).astype(np.float32) for _ in range(n)),
    )


# --- BranchSet ---------------------------------------------------------------

def test_branch_set_validation():
    with pytest.raises(ValueError):
        BranchSet(eps_inv=np.zeros((2, 2)), eps=())
    with pytest.raises(ValueError):
        BranchSet(eps_inv=np.zeros((2, 2)), eps=(np.zeros((3, 2)),))
    with pytest.raises(ValueError):
        BranchSet(eps_inv=np.zeros((2, 2)), eps=(np.zeros((2, 2)),), prompt_ids=("a", "b"))
    bs = BranchSet(eps_inv=np.zeros((2, 2)), eps=(np.zeros((2, 2)), np.zeros((2, 2))))
    assert bs.prompt_ids == ("0", "1")


# --- branch_predictions ------------------------------------------------------

def test_branches_match_inversion_for_same_prompt():
    prompt = _prompt(0)
    target = np.random.default_rng(1).standard_normal((2, 3, 3))
    den = attractor_denoiser({default_condition_key(prompt): target})
    z = np.random.default_rng(2).standard_normal((2, 3, 3))
    bs = branch_predictions(den, z, 0.5, [prompt], prompt)
    assert np.array_equal(bs.eps[0], bs.eps_inv)


def test_constant_denoiser_makes_equal_branches():
    den = constant_denoiser(np.full((2, 2, 2), 0.3))
    bs = branch_predictions(
        den, np.zeros((2, 2, 2)), 0.5, [_prompt(1), _prompt(2)], _prompt(3)
    )
    assert np.array_equal(bs.eps[0], bs.eps[1])
    assert np.array_equal(bs.eps[0], bs.eps_inv)


def test_branch_predictions_order_independent():
    rng = np.random.default_rng(4)
    prompts = [_prompt(5), _prompt(6)]
    targets = {default_condition_key(p): rng.standard_normal((2, 3, 3)) for p in prompts}
    p_inv = _prompt(7)
    targets[default_condition_key(p_inv)] = rng.standard_normal((2, 3, 3))
    den = attractor_denoiser(targets)
    z = rng.standard_normal((2, 3, 3))
    forward = branch_predictions(den, z, 0.4, prompts, p_inv)
    reverse = branch_predictions(den, z, 0.4, prompts[::-1], p_inv)
    assert np.array_equal(forward.eps[0], reverse.eps[1])
    assert np.array_equal(forward.eps[1], reverse.eps[0])
    assert np.array_equal(forward.eps_inv, reverse.eps_inv)


def test_branch_errors_carry_index():
    prompt = _prompt(8)
    den = attractor_denoiser({default_condition_key(prompt): np.zeros((2, 2))})
    with pytest.raises(BranchPredictionError, match="branch 1"):
        branch_predictions(den, np.zeros((2, 2)), 0.5, [prompt, _prompt(9)], prompt)


def test_guidance_steers_every_branch():
    rng = np.random.default_rng(10)
    prompts = [_prompt(11)]
    p_inv, p_un = _prompt(12), _prompt(13)
    targets = {
        default_condition_key(p): rng.standard_normal((1, 2, 2))
        for p in (*prompts, p_inv, p_un)
    }
    den = attractor_denoiser(targets)
    z = rng.standard_normal((1, 2, 2))
    plain = branch_predictions(den, z, 0.5, prompts, p_inv)
    guided = branch_predictions(
        den, z, 0.5, prompts, p_inv, guidance_scale=3.0, uncond_prompt=p_un
    )
    eps_u = den.predict(z, 0.5, p_un)
    np.testing.assert_allclose(guided.eps[0], eps_u + 3.0 * (plain.eps[0] - eps_u), rtol=1e-12)
    np.testing.assert_allclose(guided.eps_inv, eps_u + 3.0 * (plain.eps_inv - eps_u), rtol=1e-12)


# --- residual_norm_map -------------------------------------------------------

def test_norm_map_three_four_five():
    delta = np.zeros((2, 1, 1))
    delta[0, 0, 0], delta[1, 0, 0] = 3.0, 4.0
    assert residual_norm_map(delta)[0, 0] == 5.0


def test_norm_map_zeros():
    assert not residual_norm_map(np.zeros((3, 4, 5))).any()


def test_norm_map_full_patch():
    out = residual_norm_map(np.ones((2, 2, 2)), patch_size=2)
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(math.sqrt(8.0), rel=1e-15)


def test_norm_map_partial_edge_blocks():
    delta = np.ones((1, 3, 5))
    out = residual_norm_map(delta, patch_size=2)
    assert out.shape == (2, 3)
    # bottom-right block covers a single location
    assert out[1, 2] == pytest.approx(1.0)
    assert out[0, 0] == pytest.approx(2.0)  # four ones


def test_norm_map_validation():
    with pytest.raises(ValueError):
        residual_norm_map(np.zeros(3))
    with pytest.raises(ValueError):
        residual_norm_map(np.zeros((2, 2, 2)), patch_size=0)


# --- fuse_mean ---------------------------------------------------------------

def test_mean_of_two():
    bs = BranchSet(eps_inv=np.zeros(1), eps=(np.array([2.0]), np.array([4.0])))
    np.testing.assert_array_equal(fuse_mean(bs), [3.0])


def test_mean_single_branch_identity():
    e = np.random.default_rng(0).standard_normal((4, 8, 8)).astype(np.float32)
    bs = BranchSet(eps_inv=np.zeros_like(e), eps=(e,))
    assert np.array_equal(fuse_mean(bs), e)


def test_mean_variance_shrinks_like_one_over_n():
    # quick Monte Carlo sanity check; the full-budget run lives in acceptance
    rng = np.random.default_rng(1)
    n, samples = 4, 20000
    eps = tuple(rng.standard_normal((samples, 16)) for _ in range(n))
    fused = fuse_mean(BranchSet(eps_inv=np.zeros((samples, 16)), eps=eps))
    variance = fused.var(axis=0)
    np.testing.assert_allclose(variance, 1.0 / n, rtol=0.1)


# --- fuse_adaptive -----------------------------------------------------------

def test_adaptive_single_branch_bitwise():
    rng = np.random.default_rng(2)
    bs = _random_branch_set(rng, 1)
    fused, sel = fuse_adaptive(bs)
    assert np.array_equal(fused, bs.eps[0])
    assert not sel.any()


def test_adaptive_all_equal_branches_tie_to_zero():
    rng = np.random.default_rng(3)
    e = rng.standard_normal((2, 4, 4))
    bs = BranchSet(eps_inv=e, eps=(e.copy(), e.copy()))
    fused, sel = fuse_adaptive(bs)
    assert np.array_equal(fused, e)
    assert not sel.any()


def test_adaptive_two_location_example():
    # location 0: branch 0 wins (norm 1 vs 0.5); location 1: branch 1 (0 vs 2)
    eps_inv = np.zeros((2, 1, 2))
    d1 = np.zeros((2, 1, 2))
    d1[:, 0, 0] = (1.0, 0.0)
    d2 = np.zeros((2, 1, 2))
    d2[:, 0, 0] = (0.0, 0.5)
    d2[:, 0, 1] = (0.0, 2.0)
    bs = BranchSet(eps_inv=eps_inv, eps=(d1, d2))
    fused, sel = fuse_adaptive(bs)
    np.testing.assert_array_equal(sel, [[0, 1]])
    np.testing.assert_array_equal(fused[:, 0, 0], (1.0, 0.0))
    np.testing.assert_array_equal(fused[:, 0, 1], (0.0, 2.0))


def test_adaptive_gathers_winning_branch_bitwise():
    rng = np.random.default_rng(4)
    for n in (2, 3, 5):
        bs = _random_branch_set(rng, n)
        fused, sel = fuse_adaptive(bs)
        assert sel.shape == (8, 8)
        for y in range(8):
            for x in range(8):
                winner = bs.eps[sel[y, x]]
                assert np.array_equal(fused[:, y, x], winner[:, y, x])


def test_adaptive_max_preservation_exact():
    rng = np.random.default_rng(5)
    bs = _random_branch_set(rng, 3)
    fused, _ = fuse_adaptive(bs)
    fused_norm = residual_norm_map(fused - bs.eps_inv)
    branch_norms = np.stack([residual_norm_map(e - bs.eps_inv) for e in bs.eps])
    assert np.array_equal(fused_norm, branch_norms.max(axis=0))


def test_adaptive_block_patches():
    rng = np.random.default_rng(6)
    bs = _random_branch_set(rng, 2, shape=(2, 5, 7))
    fused, sel = fuse_adaptive(bs, patch_size=3)
    assert sel.shape == (2, 3)
    for y in range(5):
        for x in range(7):
            winner = bs.eps[sel[y // 3, x // 3]]
            assert np.array_equal(fused[:, y, x], winner[:, y, x])


def test_adaptive_permutation_equivariance():
    rng = np.random.default_rng(7)
    bs = _random_branch_set(rng, 4)
    fused, sel = fuse_adaptive(bs)
    perm = (2, 0, 3, 1)
    permuted = BranchSet(eps_inv=bs.eps_inv, eps=tuple(bs.eps[i] for i in perm))
    fused_p, sel_p = fuse_adaptive(permuted)
    assert np.array_equal(fused, fused_p)
    inverse = np.argsort(perm)
    assert np.array_equal(sel_p, inverse[sel])


def test_mean_attenuates_disjoint_residuals():
    # residuals with disjoint support: mean leaves 1/N of each, adaptive keeps all
    rng = np.random.default_rng(8)
    n = 4
    eps_inv = rng.standard_normal((2, 4, 8)).astype(np.float32)
    eps = []
    for i in range(n):
        e = eps_inv.copy()
        e[:, :, 2 * i : 2 * (i + 1)] += rng.uniform(
            0.5, 1.5, (2, 4, 2)
        ).astype(np.float32)
        eps.append(e)
    bs = BranchSet(eps_inv=eps_inv, eps=tuple(eps))
    branch_max = np.stack([residual_norm_map(e - eps_inv) for e in eps]).max(axis=0)
    adaptive_norm = residual_norm_map(fuse_adaptive(bs)[0] - eps_inv)
    mean_norm = residual_norm_map(fuse_mean(bs) - eps_inv)
    assert np.array_equal(adaptive_norm, branch_max)
    support = branch_max > 0
    np.testing.assert_allclose(mean_norm[support], branch_max[support] / n, rtol=1e-6)
    assert (mean_norm[support] < adaptive_norm[support]).all()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), patch=st.integers(1, 4))
def test_adaptive_fused_locations_come_from_winners(seed, n, patch):
    rng = np.random.default_rng(seed)
    bs = _random_branch_set(rng, n, shape=(3, 6, 6))
    fused, sel = fuse_adaptive(bs, patch_size=patch)
    grid = math.ceil(6 / patch)
    assert sel.shape == (grid, grid)
    stack = np.stack(bs.eps)
    expanded = np.repeat(np.repeat(sel, patch, 0), patch, 1)[:6, :6]
    gathered = np.take_along_axis(stack, np.broadcast_to(expanded, (3, 6, 6))[None], 0)[0]
    assert np.array_equal(fused, gathered)


# --- diagnostics -------------------------------------------------------------

def test_diagnostics_histogram_counts():
    eps_inv = np.zeros((1, 2, 2))
    e0 = np.zeros((1, 2, 2))
    e0[0, 0, :] = 1.0  # wins the top row
    e1 = np.zeros((1, 2, 2))
    e1[0, 1, :] = 2.0  # wins the bottom row
    bs = BranchSet(eps_inv=eps_inv, eps=(e0, e1))
    fused, sel = fuse_adaptive(bs)
    trace = FusionTrace()
    record_diagnostics(bs, fused, sel, trace, step=0)
    rec = trace.records[0]
    assert rec.selection_fractions == (0.5, 0.5)
    assert sum(rec.selection_fractions) == pytest.approx(1.0, abs=1e-6)


def test_diagnostics_zero_residuals():
    e = np.random.default_rng(9).standard_normal((2, 3, 3))
    bs = BranchSet(eps_inv=e, eps=(e.copy(),))
    trace = FusionTrace()
    record_diagnostics(bs, e, None, trace, step=7)
    rec = trace.records[0]
    assert rec.branch_mean_residual == (0.0,)
    assert rec.branch_global_residual == (0.0,)
    assert rec.selection_fractions is None
    assert rec.step == 7


def test_trace_file_format():
    bs = BranchSet(eps_inv=np.zeros((1, 1, 1)), eps=(np.ones((1, 1, 1)),), prompt_ids=("p1",))
    fused, sel = fuse_adaptive(bs)
    trace = FusionTrace()
    record_diagnostics(bs, fused, sel, trace, step=3)
    sink = io.StringIO()
    write_trace(trace, sink)
    lines = sink.getvalue().strip().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split() == ["3", "p1", "1", "1", "1"]
    assert lines[2].split()[:2] == ["3", "fused"]
