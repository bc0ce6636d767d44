"""Orchestration: DDIM inversion, multi-prompt editing, and reconstruction.

One inversion pass walks the timestep transitions upward, querying the
denoiser with the inversion prompt; one editing pass walks the same
transitions downward, querying once per editing prompt, fusing the
predictions, and stepping.  Latents travel in float64 end to end; the step
index handed to the denoiser is the transition's ordinal, which is also the
feature-store key for capture/injection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Denoiser, FeatureStore, capture_features, inject_features
from .fusion import (
    BranchSet,
    FusionTrace,
    branch_predictions,
    fuse_adaptive,
    fuse_mean,
    record_diagnostics,
)
from .schedule import NoiseSchedule, TimestepSequence, ddim_invert_step, ddim_sample_step


class PipelineStepError(RuntimeError):
    """Failure annotated with the pipeline step that raised it."""


@dataclass(frozen=True)
class Trajectory:
    """Latents along one pass, as (training timestep, latent) pairs."""

    entries: tuple[tuple[int, np.ndarray], ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def step_indices(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    @property
    def latents(self) -> tuple[np.ndarray, ...]:
        return tuple(z for _, z in self.entries)

    @property
    def final(self) -> np.ndarray:
        return self.entries[-1][1]


def run_inversion(
    z0: np.ndarray,
    inv_prompt,
    d: Denoiser,
    schedule: NoiseSchedule,
    steps: TimestepSequence,
    capture: bool = False,
) -> tuple[np.ndarray, Trajectory, FeatureStore]:
    """Walk the timestep transitions upward from a clean latent.

    Returns the terminal noisy latent, the full trajectory (origin plus one
    latent per transition), and the feature store (populated when `capture`).
    """
    store = FeatureStore()
    den = capture_features(d, store) if capture else d
    z = np.asarray(z0, dtype=np.float64)
    origin = steps.steps[0] if steps.steps else 0
    entries = [(origin, z)]
    for k, (lo, hi) in enumerate(steps.transitions()):
        try:
            eps = den.predict(z, schedule.abar(lo), inv_prompt, step=k)
            z = ddim_invert_step(z, eps, schedule.abar(lo), schedule.abar(hi))
        except Exception as exc:
            raise PipelineStepError(
                f"inversion step {k} (t {lo} -> {hi}): {exc}"
            ) from exc
        entries.append((hi, z))
    return z, Trajectory(tuple(entries)), store


def run_edit(
    zT: np.ndarray,
    prompts,
    inv_prompt,
    d: Denoiser,
    schedule: NoiseSchedule,
    steps: TimestepSequence,
    mode: str = "adaptive",
    feature_store: FeatureStore | None = None,
    blend: float = 0.0,
    patch_size: int = 1,
    formula: str = "paper-exact-inverse",
    guidance_scale: float = 1.0,
    uncond_prompt=None,
    prompt_ids=None,
) -> tuple[np.ndarray, FusionTrace]:
    """Walk the transitions downward from a noisy latent, fusing per step.

    mode "adaptive" keeps the strongest residual per patch, "mean" averages
    the branches, "single" uses the first branch alone.
    """
    if len(prompts) < 1:
        raise ValueError("need at least one editing prompt")
    den = d
    if feature_store is not None and blend > 0.0:
        den = inject_features(d, feature_store, blend)
    z = np.asarray(zT, dtype=np.float64)
    trace = FusionTrace()
    transitions = steps.transitions()
    for k in reversed(range(len(transitions))):
        lo, hi = transitions[k]
        try:
            branches = branch_predictions(
                den,
                z,
                schedule.abar(hi),
                prompts,
                inv_prompt,
                step=k,
                guidance_scale=guidance_scale,
                uncond_prompt=uncond_prompt,
                prompt_ids=prompt_ids,
            )
            fused, sel = _fuse(branches, mode, patch_size)
            z = ddim_sample_step(z, fused, schedule.abar(lo), schedule.abar(hi), formula)
        except Exception as exc:
            raise PipelineStepError(
                f"editing step {k} (t {hi} -> {lo}): {exc}"
            ) from exc
        record_diagnostics(branches, fused, sel, trace, step=k)
    return z, trace


def run_reconstruction(
    z0: np.ndarray,
    inv_prompt,
    d: Denoiser,
    schedule: NoiseSchedule,
    steps: TimestepSequence,
    formula: str = "paper-exact-inverse",
) -> tuple[np.ndarray, float]:
    """Invert then sample back with the inversion prompt alone.

    Returns the reconstructed latent and its max-abs error against z0.
    """
    zT, _, _ = run_inversion(z0, inv_prompt, d, schedule, steps)
    recon, _ = run_edit(
        zT, [inv_prompt], inv_prompt, d, schedule, steps, mode="single", formula=formula
    )
    reference = np.asarray(z0, dtype=np.float64)
    error = float(np.max(np.abs(recon - reference))) if reference.size else 0.0
    return recon, error


def _fuse(branches: BranchSet, mode: str, patch_size: int):
    if mode == "adaptive":
        return fuse_adaptive(branches, patch_size)
    if mode == "mean":
        return fuse_mean(branches), None
    if mode == "single":
        return branches.eps[0], None
    raise ValueError(f"unknown fusion mode {mode!r}")
