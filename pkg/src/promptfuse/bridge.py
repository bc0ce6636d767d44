"""Embedding-space bridge between the diffusion conditioning space and the
aligned multi-modal space.

Forward, a pooled conditioning vector c is projected and normalized,

    c_clip = M c / ||M c||,

and backward an aligned-space vector c_a is pulled into conditioning space by
ridge-regularized least squares,

    c_tilde = (M^T M + lambda I)^{-1} M^T (inv_norm * c_a),

where inv_norm carries the norm of the inversion prompt so the bridged vector
lands at a realistic magnitude.  The solve always runs in float64 through a
symmetric positive-definite factorization; lambda > 0 guarantees positive
definiteness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

POOLING_LAST = "last-token"
POOLING_INDEX = "index"
POOLING_MEAN = "mean"


class DegenerateInputError(ValueError):
    """Input maps to the zero vector where a direction is required."""


class SingularSystemError(np.linalg.LinAlgError):
    """Regularized normal equations could not be factorized."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class PromptEmbedding:
    """Token-vector sequence in the diffusion model's conditioning space.

    Row 0 and row L-1 are the special start/end tokens; the middle rows carry
    content.  The token matrix is copied and frozen on construction.
    """

    tokens: np.ndarray

    def __post_init__(self):
        tokens = np.array(self.tokens, dtype=np.result_type(self.tokens, np.float32))
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be 2-D (L x d), got shape {tokens.shape}")
        if tokens.shape[0] < 2:
            raise ValueError("a prompt needs at least the two special tokens")
        if not np.isfinite(tokens).all():
            raise ValueError("tokens contain non-finite values")
        tokens.flags.writeable = False
        object.__setattr__(self, "tokens", tokens)

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def dim(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def first_token(self) -> np.ndarray:
        return self.tokens[0]

    @property
    def last_token(self) -> np.ndarray:
        return self.tokens[-1]

    @property
    def middle_tokens(self) -> np.ndarray:
        return self.tokens[1:-1]


def _as_tokens(seq) -> np.ndarray:
    tokens = seq.tokens if isinstance(seq, PromptEmbedding) else np.asarray(seq)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"expected an L x d token matrix, got shape {tokens.shape}")
    return tokens


def pool_embedding(seq, strategy: str = POOLING_LAST, index: int | None = None) -> np.ndarray:
    """Reduce a token sequence to one vector: last row, row k, or the row mean."""
    tokens = _as_tokens(seq)
    if strategy == POOLING_LAST:
        return tokens[-1].copy()
    if strategy == POOLING_INDEX:
        if index is None:
            raise ValueError("index pooling needs an index")
        if not 0 <= index < tokens.shape[0]:
            raise IndexError(f"pooling index {index} out of range for {tokens.shape[0]} rows")
        return tokens[index].copy()
    if strategy == POOLING_MEAN:
        return tokens.mean(axis=0)
    raise ValueError(f"unknown pooling strategy {strategy!r}")


def project_to_clip(c_pooled: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    """Project into the aligned space and normalize to a unit vector."""
    mapping = _checked_map(mapping)
    c_pooled = _checked_vector(c_pooled, mapping.shape[1], "conditioning-space vector")
    projected = mapping @ c_pooled
    norm = float(np.linalg.norm(projected))
    if norm == 0.0:
        raise DegenerateInputError("projection has zero norm; cannot normalize")
    return projected / norm


def solve_tikhonov(mapping: np.ndarray, rhs: np.ndarray, lambda_: float) -> np.ndarray:
    """Solve (M^T M + lambda I) x = M^T rhs in float64 via Cholesky."""
    mapping = _checked_map(mapping)
    rhs = _checked_vector(rhs, mapping.shape[0], "aligned-space vector")
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    with np.errstate(over="ignore", invalid="ignore"):
        gram = mapping.T @ mapping + lambda_ * np.eye(mapping.shape[1])
        target = mapping.T @ rhs
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
        solution = scipy.linalg.cho_solve(factor, target)
    except (np.linalg.LinAlgError, ValueError) as exc:
        # extreme scales can overflow the gram matrix before factorization
        raise SingularSystemError(
            "regularized normal equations failed to factorize",
            condition_estimate=_condition_estimate(gram),
        ) from exc
    if not np.isfinite(solution).all():
        raise SingularSystemError(
            "solve produced non-finite values",
            condition_estimate=_condition_estimate(gram),
        )
    return solution


def _condition_estimate(gram: np.ndarray) -> float:
    if not np.isfinite(gram).all():
        return float("inf")
    try:
        return float(np.linalg.cond(gram))
    except np.linalg.LinAlgError:
        return float("inf")


def invert_to_sd(
    c_audio: np.ndarray,
    mapping: np.ndarray,
    inv_norm: float,
    lambda_: float,
) -> np.ndarray:
    """Pull an aligned-space vector back into conditioning space.

    The vector is rescaled by `inv_norm` (the inversion prompt's norm) before
    the regularized solve, so the result is linear in both arguments.
    """
    if not inv_norm > 0:
        raise ValueError(f"inv_norm must be > 0, got {inv_norm}")
    mapping = _checked_map(mapping)
    c_audio = _checked_vector(c_audio, mapping.shape[0], "aligned-space vector")
    return solve_tikhonov(mapping, inv_norm * c_audio, lambda_)


def scale_magnitude(c_audio: np.ndarray, s: float) -> np.ndarray:
    """Rescale an aligned-space vector; applied before inversion so the
    bridged feature (and the edit strength it drives) scales linearly."""
    if not s > 0:
        raise ValueError(f"scale must be > 0, got {s}")
    return s * np.asarray(c_audio)


def assemble_prompt(
    c_tilde: np.ndarray,
    inv_seq: PromptEmbedding,
    replication: int | None = None,
) -> PromptEmbedding:
    """Build an editing prompt: special tokens from the inversion prompt with
    the bridged vector replicated in between.

    `replication=None` matches the inversion prompt's length (L - 2 copies).
    """
    c_tilde = np.asarray(c_tilde)
    if c_tilde.ndim != 1:
        raise ValueError(f"bridged vector must be 1-D, got shape {c_tilde.shape}")
    if c_tilde.shape[0] != inv_seq.dim:
        raise ValueError(
            f"bridged vector dim {c_tilde.shape[0]} != prompt dim {inv_seq.dim}"
        )
    if replication is None:
        replication = inv_seq.length - 2
    if replication < 1:
        raise ValueError(
            f"replication must be >= 1 (inversion prompt of length {inv_seq.length} "
            "is too short for the length-matching default)"
        )
    dtype = np.result_type(c_tilde, inv_seq.tokens)
    rows = np.empty((replication + 2, inv_seq.dim), dtype=dtype)
    rows[0] = inv_seq.first_token
    rows[1:-1] = c_tilde
    rows[-1] = inv_seq.last_token
    return PromptEmbedding(rows)


def inversion_norm(
    inv_seq: PromptEmbedding,
    mode: str = "pooled",
    strategy: str = POOLING_LAST,
    index: int | None = None,
) -> float:
    """Magnitude of the inversion prompt used to scale bridged vectors.

    "pooled": Euclidean norm of the pooled embedding (default);
    "sequence": Frobenius norm of the full token matrix.
    """
    if mode == "pooled":
        return float(np.linalg.norm(pool_embedding(inv_seq, strategy, index)))
    if mode == "sequence":
        return float(np.linalg.norm(inv_seq.tokens))
    raise ValueError(f"unknown inversion-norm mode {mode!r}")


def _checked_map(mapping) -> np.ndarray:
    mapping = np.asarray(mapping, dtype=np.float64)
    if mapping.ndim != 2 or min(mapping.shape) < 1:
        raise ValueError(f"mapping must be a 2-D matrix, got shape {mapping.shape}")
    if not np.isfinite(mapping).all():
        raise ValueError("mapping contains non-finite values")
    return mapping


def _checked_vector(vec, dim: int, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"{what} must be 1-D, got shape {vec.shape}")
    if vec.shape[0] != dim:
        raise ValueError(f"{what} has dim {vec.shape[0]}, expected {dim}")
    if not np.isfinite(vec).all():
        raise ValueError(f"{what} contains non-finite values")
    return vec
