"""Multi-prompt noise aggregation.

Given per-prompt predictions eps_i and the inversion-prompt prediction
eps_inv, the residuals delta_i = eps_i - eps_inv say where each prompt wants
to push the latent.  Averaging the eps_i shrinks their variance by 1/N and
washes edits out; adaptive selection instead keeps, per spatial patch, the
residual with the largest channel-wise l2 norm:

    fused(p) = eps_inv(p) + delta_{i*(p)}(p),   i*(p) = argmax_i ||delta_i(p)||

with ties broken toward the lowest branch index.  The fused tensor is
gathered directly from the winning branches, so winning values pass through
bit-exactly -- no blending, no attenuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .denoiser import Denoiser


class BranchPredictionError(RuntimeError):
    """Denoiser failure annotated with the branch that raised it."""


@dataclass(frozen=True)
class BranchSet:
    """One inversion-prompt prediction plus N editing-branch predictions."""

    eps_inv: np.ndarray
    eps: tuple[np.ndarray, ...]
    prompt_ids: tuple[str, ...] = ()

    def __post_init__(self):
        eps = tuple(np.asarray(e) for e in self.eps)
        if len(eps) < 1:
            raise ValueError("a branch set needs at least one editing branch")
        eps_inv = np.asarray(self.eps_inv)
        for e in eps:
            if e.shape != eps_inv.shape:
                raise ValueError(
                    f"branch shape {e.shape} != inversion shape {eps_inv.shape}"
                )
        ids = self.prompt_ids or tuple(str(i) for i in range(len(eps)))
        if len(ids) != len(eps):
            raise ValueError(f"{len(ids)} prompt ids for {len(eps)} branches")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "eps_inv", eps_inv)
        object.__setattr__(self, "prompt_ids", tuple(str(i) for i in ids))

    @property
    def num_branches(self) -> int:
        return len(self.eps)


@dataclass(frozen=True)
class StepRecord:
    """Per-step diagnostics: residual magnitudes (mean per-location norm and
    Frobenius) per branch, fused-output magnitudes, and the fraction of
    patches each branch won (None outside adaptive mode)."""

    step: int
    prompt_ids: tuple[str, ...]
    branch_mean_residual: tuple[float, ...]
    branch_global_residual: tuple[float, ...]
    fused_mean_magnitude: float
    fused_global_magnitude: float
    selection_fractions: tuple[float, ...] | None


@dataclass
class FusionTrace:
    """Step diagnostics accumulated over one editing run."""

    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


def branch_predictions(
    d: Denoiser,
    z_t: np.ndarray,
    abar_t: float,
    prompts: Sequence,
    inv_prompt,
    step: int | None = None,
    guidance_scale: float = 1.0,
    uncond_prompt=None,
    prompt_ids: Sequence[str] | None = None,
) -> BranchSet:
    """Query the denoiser once per prompt and once for the inversion prompt.

    The result is a pure function of the inputs, independent of evaluation
    order.  When guidance_scale != 1 and an unconditional prompt is given,
    every conditional prediction (branches and inversion alike) is steered:
    eps <- eps_u + g (eps - eps_u), so residuals compare guided vs guided.
    """
    if len(prompts) < 1:
        raise ValueError("need at least one editing prompt")
    guided = guidance_scale != 1.0 and uncond_prompt is not None
    eps_u = d.predict(z_t, abar_t, uncond_prompt, step=step) if guided else None

    def steer(eps):
        if not guided:
            return eps
        return eps_u + guidance_scale * (eps - eps_u)

    try:
        eps_inv = steer(d.predict(z_t, abar_t, inv_prompt, step=step))
    except BranchPredictionError:
        raise
    except Exception as exc:
        raise BranchPredictionError(f"inversion branch: {exc}") from exc
    eps = []
    for i, prompt in enumerate(prompts):
        try:
            eps.append(steer(d.predict(z_t, abar_t, prompt, step=step)))
        except Exception as exc:
            raise BranchPredictionError(f"branch {i}: {exc}") from exc
    ids = tuple(prompt_ids) if prompt_ids is not None else ()
    return BranchSet(eps_inv=eps_inv, eps=tuple(eps), prompt_ids=ids)


def residual_norm_map(delta: np.ndarray, patch_size: int = 1) -> np.ndarray:
    """Channel-wise l2 norm per spatial patch.

    The last two axes are the spatial grid; every leading axis counts as
    channels.  For patch_size > 1 the squares are pooled over k x k blocks
    (edge blocks may be partial), grid extents ceil(h/k) x ceil(w/k).
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim < 2:
        raise ValueError(f"expected channels x h x w, got shape {delta.shape}")
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    h, w = delta.shape[-2:]
    squares = (delta * delta).reshape(-1, h, w).sum(axis=0)
    gh = math.ceil(h / patch_size)
    gw = math.ceil(w / patch_size)
    padded = np.zeros((gh * patch_size, gw * patch_size))
    padded[:h, :w] = squares
    pooled = padded.reshape(gh, patch_size, gw, patch_size).sum(axis=(1, 3))
    return np.sqrt(pooled)


def fuse_mean(b: BranchSet) -> np.ndarray:
    """Elementwise mean of the editing branches (eps_inv excluded)."""
    return np.stack(b.eps, axis=0).mean(axis=0)


def fuse_adaptive(b: BranchSet, patch_size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Keep, per patch, the branch whose residual has the largest norm.

    Returns the fused tensor and the patch-grid selection map.  The output is
    gathered from the winning branches, so every location equals
    eps_inv + delta_{i*} exactly, and N=1 returns the single branch bitwise.
    """
    norms = np.stack(
        [residual_norm_map(e - b.eps_inv, patch_size) for e in b.eps], axis=0
    )
    selection = np.argmax(norms, axis=0)  # ties resolve to the lowest index
    h, w = b.eps_inv.shape[-2:]
    per_location = np.repeat(np.repeat(selection, patch_size, axis=0), patch_size, axis=1)
    per_location = per_location[:h, :w]
    stack = np.stack(b.eps, axis=0)
    index = np.broadcast_to(per_location, stack.shape[1:])[None]
    fused = np.take_along_axis(stack, index, axis=0)[0]
    return fused, selection


def record_diagnostics(
    b: BranchSet,
    fused: np.ndarray,
    sel: np.ndarray | None,
    trace: FusionTrace,
    step: int,
) -> None:
    """Append one step's magnitudes and selection histogram to the trace."""
    mean_res = []
    global_res = []
    for e in b.eps:
        delta = np.asarray(e, np.float64) - np.asarray(b.eps_inv, np.float64)
        mean_res.append(float(residual_norm_map(delta).mean()))
        global_res.append(float(np.linalg.norm(delta)))
    fused64 = np.asarray(fused, np.float64)
    fractions = None
    if sel is not None:
        counts = np.bincount(np.asarray(sel).ravel(), minlength=b.num_branches)
        fractions = tuple(float(c) / sel.size for c in counts[: b.num_branches])
    trace.append(
        StepRecord(
            step=int(step),
            prompt_ids=b.prompt_ids,
            branch_mean_residual=tuple(mean_res),
            branch_global_residual=tuple(global_res),
            fused_mean_magnitude=float(residual_norm_map(fused64).mean()),
            fused_global_magnitude=float(np.linalg.norm(fused64)),
            selection_fractions=fractions,
        )
    )


def write_trace(trace: FusionTrace, sink: IO[str]) -> None:
    """Emit one line per (step, branch) plus a `fused` line per step:

        step branch mean_residual_norm global_norm selected_fraction

    Branch lines carry residual magnitudes; the fused line carries the fused
    prediction's own magnitudes and `-` outside adaptive mode.
    """
    sink.write("# step branch mean_residual_norm global_norm selected_fraction\n")
    for rec in trace.records:
        for i, branch_id in enumerate(rec.prompt_ids):
            frac = "-" if rec.selection_fractions is None else f"{rec.selection_fractions[i]:.12g}"
            sink.write(
                f"{rec.step} {branch_id} {rec.branch_mean_residual[i]:.12g} "
                f"{rec.branch_global_residual[i]:.12g} {frac}\n"
            )
        sink.write(
            f"{rec.step} fused {rec.fused_mean_magnitude:.12g} "
            f"{rec.fused_global_magnitude:.12g} "
            f"{'1' if rec.selection_fractions is not None else '-'}\n"
        )


def save_trace(path, trace: FusionTrace) -> None:
    with open(path, "w", encoding="utf-8") as sink:
        write_trace(trace, sink)
