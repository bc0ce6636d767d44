"""Embedding bridge: pooling, projection, the regularized solve, assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptfuse import (
    DegenerateInputError,
    PromptEmbedding,
    assemble_prompt,
    inversion_norm,
    invert_to_sd,
    pool_embedding,
    project_to_clip,
    scale_magnitude,
    solve_tikhonov,
)

LAMBDA = 1e-5


def _normal_equations_oracle(mapping, rhs, lam):
    """Brute force: assemble M^T M + lam I explicitly, dense solve."""
    mapping = np.asarray(mapping, np.float64)
    gram = mapping.T @ mapping + lam * np.eye(mapping.shape[1])
    return np.linalg.solve(gram, mapping.T @ np.asarray(rhs, np.float64))


def _conditioned_matrix(rng, d_out, d_in, sigma_min=0.5, sigma_max=5.0):
    u, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    v, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    k = min(d_out, d_in)
    sigma = np.zeros((d_out, d_in))
    sigma[np.arange(k), np.arange(k)] = np.linspace(sigma_min, sigma_max, k)
    return u @ sigma @ v.T


# --- PromptEmbedding ---------------------------------------------------------

def test_prompt_embedding_validation():
    with pytest.raises(ValueError):
        PromptEmbedding(np.zeros((1, 4)))  # needs both special tokens
    with pytest.raises(ValueError):
        PromptEmbedding(np.zeros(4))  # not 2-D
    with pytest.raises(ValueError):
        PromptEmbedding(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_prompt_embedding_is_frozen():
    prompt = PromptEmbedding(np.ones((3, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        prompt.tokens[0, 0] = 5.0
    assert prompt.length == 3 and prompt.dim == 2
    np.testing.assert_array_equal(prompt.middle_tokens, np.ones((1, 2)))


# --- pooling -----------------------------------------------------------------

def test_pool_strategies():
    tokens = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(pool_embedding(tokens, "last-token"), [3.0, 4.0])
    np.testing.assert_array_equal(pool_embedding(tokens, "mean"), [2.0, 3.0])
    np.testing.assert_array_equal(pool_embedding(tokens, "index", index=0), [1.0, 2.0])


@pytest.mark.parametrize("strategy,index", [("last-token", None), ("mean", None), ("index", 0)])
def test_pool_single_row(strategy, index):
    np.testing.assert_array_equal(
        pool_embedding(np.array([[5.0, 5.0]]), strategy, index), [5.0, 5.0]
    )


def test_pool_index_out_of_range():
    with pytest.raises(IndexError):
        pool_embedding(np.ones((2, 2)), "index", index=2)
    with pytest.raises(ValueError):
        pool_embedding(np.ones((2, 2)), "nonsense")


# --- forward projection ------------------------------------------------------

def test_project_identity_normalizes():
    out = project_to_clip(np.array([3.0, 4.0]), np.eye(2))
    np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-15)


def test_project_zero_vector_is_degenerate():
    with pytest.raises(DegenerateInputError):
        project_to_clip(np.zeros(2), np.eye(2))


def test_project_emits_unit_vectors():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mapping = _conditioned_matrix(rng, 6, 4)
        out = project_to_clip(rng.standard_normal(4), mapping)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-6


# --- regularized solve -------------------------------------------------------

def test_solve_identity_closed_form():
    out = solve_tikhonov(np.eye(2), np.array([2.0, 0.0]), LAMBDA)
    np.testing.assert_allclose(out, [2.0 / (1.0 + LAMBDA), 0.0], rtol=1e-12, atol=1e-18)


def test_solve_diagonal_closed_form():
    out = solve_tikhonov(np.diag([1.0, 2.0]), np.array([0.0, 1.0]), LAMBDA)
    np.testing.assert_allclose(out, [0.0, 2.0 / (4.0 + LAMBDA)], rtol=1e-12, atol=1e-18)


def test_solve_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        mapping = rng.standard_normal((4, 3))
        rhs = rng.standard_normal(4)
        out = solve_tikhonov(mapping, rhs, LAMBDA)
        oracle = _normal_equations_oracle(mapping, rhs, LAMBDA)
        np.testing.assert_allclose(out, oracle, rtol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-8, 1e-2))
def test_solve_stationarity(seed, lam):
    # gradient of the regularized objective vanishes at the solution
    rng = np.random.default_rng(seed)
    mapping = rng.standard_normal((5, 4))
    rhs = rng.standard_normal(5)
    x = solve_tikhonov(mapping, rhs, lam)
    gradient = mapping.T @ (mapping @ x - rhs) + lam * x
    assert np.linalg.norm(gradient) <= 1e-8 * np.linalg.norm(mapping.T @ rhs)


def test_solve_rejects_bad_lambda():
    with pytest.raises(ValueError):
        solve_tikhonov(np.eye(2), np.zeros(2), 0.0)


def test_solve_reports_singular_system():
    from promptfuse import SingularSystemError

    # finite map whose gram matrix overflows to inf
    with pytest.raises(SingularSystemError) as excinfo:
        solve_tikhonov(np.full((4, 4), 1e200), np.ones(4), LAMBDA)
    assert excinfo.value.condition_estimate == np.inf


# --- inverse bridge ----------------------------------------------------------

def test_invert_identity_closed_form():
    out = invert_to_sd(np.array([1.0, 0.0]), np.eye(2), inv_norm=2.0, lambda_=LAMBDA)
    np.testing.assert_allclose(out, [2.0 / (1.0 + LAMBDA), 0.0], rtol=1e-12, atol=1e-18)


def test_invert_is_linear():
    rng = np.random.default_rng(23)
    mapping = _conditioned_matrix(rng, 4, 4)
    c = rng.standard_normal(4)
    base = invert_to_sd(c, mapping, 1.0, LAMBDA)
    np.testing.assert_allclose(invert_to_sd(3.0 * c, mapping, 1.0, LAMBDA), 3.0 * base, rtol=1e-10)
    np.testing.assert_allclose(invert_to_sd(c, mapping, 3.0, LAMBDA), 3.0 * base, rtol=1e-10)


def test_invert_requires_positive_norm():
    with pytest.raises(ValueError):
        invert_to_sd(np.ones(2), np.eye(2), 0.0, LAMBDA)


def test_round_trip_cosine():
    # forward(backward(c)) stays aligned when lambda << sigma_min^2
    rng = np.random.default_rng(29)
    for _ in range(20):
        mapping = _conditioned_matrix(rng, 64, 64)
        c = rng.standard_normal(64)
        c /= np.linalg.norm(c)
        back = invert_to_sd(c, mapping, 1.0, LAMBDA)
        forward = project_to_clip(back, mapping)
        assert float(forward @ c) >= 0.999


def test_round_trip_deviation_shrinks_with_lambda():
    rng = np.random.default_rng(31)
    mapping = _conditioned_matrix(rng, 16, 16)
    c = rng.standard_normal(16)
    c /= np.linalg.norm(c)
    deviations = []
    for lam in (1e-2, 1e-4, 1e-6):
        forward = project_to_clip(invert_to_sd(c, mapping, 1.0, lam), mapping)
        deviations.append(np.linalg.norm(forward - c))
    assert deviations[0] > deviations[1] > deviations[2]


# --- magnitude and assembly --------------------------------------------------

def test_scale_magnitude():
    c = np.array([1.0, 0.0])
    np.testing.assert_array_equal(scale_magnitude(c, 1.0), c)
    np.testing.assert_array_equal(scale_magnitude(c, 2.0), [2.0, 0.0])
    with pytest.raises(ValueError):
        scale_magnitude(c, 0.0)
    with pytest.raises(ValueError):
        scale_magnitude(c, -1.0)


def test_scaling_commutes_with_inversion():
    rng = np.random.default_rng(37)
    mapping = _conditioned_matrix(rng, 8, 8)
    c = rng.standard_normal(8)
    doubled = invert_to_sd(scale_magnitude(c, 2.0), mapping, 1.0, LAMBDA)
    np.testing.assert_allclose(doubled, 2.0 * invert_to_sd(c, mapping, 1.0, LAMBDA), rtol=1e-12)


def test_assemble_single_replication():
    inv = PromptEmbedding(np.array([[1.0, 1.0], [9.0, 9.0]]))
    out = assemble_prompt(np.array([5.0, 6.0]), inv, replication=1)
    np.testing.assert_array_equal(out.tokens, [[1, 1], [5, 6], [9, 9]])


def test_assemble_replication_three():
    inv = PromptEmbedding(np.arange(8, dtype=np.float64).reshape(4, 2))
    out = assemble_prompt(np.array([5.0, 6.0]), inv, replication=3)
    assert out.length == 5
    for row in out.tokens[1:-1]:
        np.testing.assert_array_equal(row, [5.0, 6.0])
    np.testing.assert_array_equal(out.first_token, inv.first_token)
    np.testing.assert_array_equal(out.last_token, inv.last_token)


def test_assemble_default_matches_inversion_length():
    inv = PromptEmbedding(np.random.default_rng(0).standard_normal((7, 3)))
    out = assemble_prompt(np.zeros(3), inv)
    assert out.length == inv.length


def test_assemble_errors():
    inv = PromptEmbedding(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        assemble_prompt(np.zeros(2), inv)  # dimension mismatch
    with pytest.raises(ValueError):
        assemble_prompt(np.zeros(3), PromptEmbedding(np.zeros((2, 3))))  # no room


def test_inversion_norm_modes():
    tokens = np.array([[3.0, 4.0], [0.0, 2.0]])
    prompt = PromptEmbedding(tokens)
    assert inversion_norm(prompt, "pooled", "last-token") == pytest.approx(2.0)
    assert inversion_norm(prompt, "sequence") == pytest.approx(np.linalg.norm(tokens))
    with pytest.raises(ValueError):
        inversion_norm(prompt, "max")
