"""Reproducible demo scenarios over the built-in toy denoisers.

Every scenario synthesizes its fixtures from the config seed, writes its
artifacts (tensors, traces, report.txt) deterministically, and returns a
pass/fail result:

* roundtrip  -- invert then sample back; reconstruction must be exact.
* disjoint   -- two prompts editing disjoint quadrants; adaptive fusion must
  match the merged-target run while mean fusion falls short in both regions.
* magnitude  -- audio vectors bridged at growing scales must displace the
  output monotonically.
* ablation   -- mean fusion attenuates disjoint residuals by 1/N while
  adaptive selection preserves the per-patch maximum exactly.

The attractor targets for bridged prompts follow a simple response model:
edit amplitude proportional to the prompt's content-row magnitude, which is
what lets prompt scaling show up as edit strength.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bridge import (
    PromptEmbedding,
    assemble_prompt,
    inversion_norm,
    invert_to_sd,
    scale_magnitude,
)
from .config import PipelineConfig
from .denoiser import attractor_denoiser, constant_denoiser, default_condition_key
from .fusion import branch_predictions, fuse_adaptive, fuse_mean, residual_norm_map, save_trace
from .nbt import save_tensor
from .pipeline import run_edit, run_inversion
from .schedule import build_schedule, select_timesteps

RECONSTRUCTION_TOLERANCE = 1e-5
DISJOINT_TOLERANCE = 1e-5


@dataclass(frozen=True)
class DemoResult:
    name: str
    passed: bool
    lines: tuple[str, ...]


def run_demo(name: str, out_dir, config: PipelineConfig) -> DemoResult:
    try:
        scenario = SCENARIOS[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r}; choose from {', '.join(sorted(SCENARIOS))}"
        ) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = scenario(out, config)
    (out / "report.txt").write_text("\n".join(result.lines) + "\n", encoding="utf-8")
    return result


def demo_roundtrip(out: Path, config: PipelineConfig) -> DemoResult:
    rng = np.random.default_rng(config.seed)
    z0 = rng.standard_normal((4, 8, 8)).astype(np.float32)
    field = (0.5 * rng.standard_normal((4, 8, 8))).astype(np.float32)
    prompt = _prompt(rng, 4, 8)
    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)
    den = constant_denoiser(field)

    zT, _, _ = run_inversion(z0, prompt, den, schedule, steps)
    recon, _ = run_edit(
        zT, [prompt], prompt, den, schedule, steps,
        mode="single", formula=config.inversion_formula,
    )
    error = float(np.max(np.abs(recon - z0)))
    save_tensor(out / "z_T.nbt", zT)
    save_tensor(out / "reconstructed.nbt", recon)

    passed = error <= RECONSTRUCTION_TOLERANCE
    lines = (
        "scenario: roundtrip",
        f"steps: {len(steps)}  formula: {config.inversion_formula}",
        f"reconstruction max_abs_error = {error:.6e} (tolerance {RECONSTRUCTION_TOLERANCE:.1e})",
        f"result: {'PASS' if passed else 'FAIL'}",
    )
    return DemoResult("roundtrip", passed, lines)


def demo_disjoint(out: Path, config: PipelineConfig) -> DemoResult:
    rng = np.random.default_rng(config.seed)
    shape = (4, 16, 16)
    region_a = (slice(None), slice(0, 8), slice(0, 8))
    region_b = (slice(None), slice(0, 8), slice(8, 16))

    z0 = rng.standard_normal(shape).astype(np.float32)
    t_inv = rng.standard_normal(shape).astype(np.float32)
    t_a = t_inv.copy()
    t_a[region_a] += rng.uniform(0.5, 1.5, t_a[region_a].shape).astype(np.float32)
    t_b = t_inv.copy()
    t_b[region_b] += rng.uniform(0.5, 1.5, t_b[region_b].shape).astype(np.float32)
    t_merged = t_inv.copy()
    t_merged[region_a] = t_a[region_a]
    t_merged[region_b] = t_b[region_b]

    p_inv, p_a, p_b, p_merged = (_prompt(rng, 4, 8) for _ in range(4))
    den = attractor_denoiser({
        default_condition_key(p): t
        for p, t in ((p_inv, t_inv), (p_a, t_a), (p_b, t_b), (p_merged, t_merged))
    })
    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)

    zT, _, _ = run_inversion(z0, p_inv, den, schedule, steps)
    kwargs = dict(formula=config.inversion_formula, patch_size=config.patch_size)
    z_adaptive, trace_adaptive = run_edit(
        zT, [p_a, p_b], p_inv, den, schedule, steps, mode="adaptive", **kwargs
    )
    z_mean, trace_mean = run_edit(
        zT, [p_a, p_b], p_inv, den, schedule, steps, mode="mean", **kwargs
    )
    z_merged, _ = run_edit(
        zT, [p_merged], p_inv, den, schedule, steps, mode="single", **kwargs
    )

    mismatch = float(np.max(np.abs(z_adaptive - z_merged)))
    dist = {
        ("adaptive", "A"): _distance(z_adaptive, z_merged, region_a),
        ("adaptive", "B"): _distance(z_adaptive, z_merged, region_b),
        ("mean", "A"): _distance(z_mean, z_merged, region_a),
        ("mean", "B"): _distance(z_mean, z_merged, region_b),
    }
    save_tensor(out / "edited_adaptive.nbt", z_adaptive)
    save_tensor(out / "edited_mean.nbt", z_mean)
    save_tensor(out / "edited_merged.nbt", z_merged)
    save_trace(out / "trace_adaptive.txt", trace_adaptive)
    save_trace(out / "trace_mean.txt", trace_mean)

    passed = (
        mismatch <= DISJOINT_TOLERANCE
        and dist[("mean", "A")] > dist[("adaptive", "A")]
        and dist[("mean", "B")] > dist[("adaptive", "B")]
    )
    lines = (
        "scenario: disjoint",
        f"adaptive vs merged-target max_abs mismatch = {mismatch:.6e} "
        f"(tolerance {DISJOINT_TOLERANCE:.1e})",
        f"distance to merged run, quadrant A: adaptive {dist[('adaptive', 'A')]:.6e}, "
        f"mean {dist[('mean', 'A')]:.6e}",
        f"distance to merged run, quadrant B: adaptive {dist[('adaptive', 'B')]:.6e}, "
        f"mean {dist[('mean', 'B')]:.6e}",
        f"result: {'PASS' if passed else 'FAIL'}",
    )
    return DemoResult("disjoint", passed, lines)


def demo_magnitude(out: Path, config: PipelineConfig) -> DemoResult:
    rng = np.random.default_rng(config.seed)
    d_sd = d_clip = 8
    shape = (4, 8, 8)
    scales = (0.5, 1.0, 2.0)

    inv_seq = _prompt(rng, 6, d_sd)
    mapping = _well_conditioned_map(rng, d_clip, d_sd)
    audio = rng.standard_normal(d_clip)
    audio /= np.linalg.norm(audio)
    z0 = rng.standard_normal(shape).astype(np.float32)
    t_inv = rng.standard_normal(shape).astype(np.float32)
    direction = rng.standard_normal(shape).astype(np.float32)

    inv_norm = inversion_norm(
        inv_seq, config.inv_norm_mode, config.pooling, config.pooling_index
    )
    prompts = {}
    for s in scales:
        bridged = invert_to_sd(
            scale_magnitude(audio, s), mapping, inv_norm, config.lambda_
        )
        prompts[s] = assemble_prompt(bridged, inv_seq, config.replication_count)

    # toy response model: edit amplitude tracks the prompt's content magnitude
    reference = float(np.linalg.norm(prompts[1.0].middle_tokens[0]))
    targets = {default_condition_key(inv_seq): t_inv}
    for s, prompt in prompts.items():
        amplitude = float(np.linalg.norm(prompt.middle_tokens[0])) / reference
        targets[default_condition_key(prompt)] = t_inv + amplitude * direction
    den = attractor_denoiser(targets)

    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)
    zT, _, _ = run_inversion(z0, inv_seq, den, schedule, steps)
    recon, _ = run_edit(
        zT, [inv_seq], inv_seq, den, schedule, steps,
        mode="single", formula=config.inversion_formula,
    )
    displacements = []
    for s in scales:
        edited, _ = run_edit(
            zT, [prompts[s]], inv_seq, den, schedule, steps,
            mode="single", formula=config.inversion_formula,
        )
        displacements.append(float(np.linalg.norm(edited - recon)))
        save_tensor(out / f"edited_scale_{s:g}.nbt", edited)
        save_tensor(out / f"prompt_scale_{s:g}.nbt", prompts[s].tokens)
    save_tensor(out / "reconstructed.nbt", recon)

    passed = all(a < b for a, b in zip(displacements, displacements[1:]))
    lines = (
        "scenario: magnitude",
        *(
            f"scale {s:g}: edit displacement = {d:.6e}"
            for s, d in zip(scales, displacements)
        ),
        f"strictly increasing: {'yes' if passed else 'no'}",
        f"result: {'PASS' if passed else 'FAIL'}",
    )
    return DemoResult("magnitude", passed, lines)


def demo_ablation(out: Path, config: PipelineConfig) -> DemoResult:
    rng = np.random.default_rng(config.seed)
    shape = (4, 8, 8)
    top = (slice(None), slice(0, 4), slice(None))
    bottom = (slice(None), slice(4, 8), slice(None))

    z0 = rng.standard_normal(shape).astype(np.float32)
    t_inv = rng.standard_normal(shape).astype(np.float32)
    t_a = t_inv.copy()
    t_a[top] += rng.uniform(0.5, 1.5, t_a[top].shape).astype(np.float32)
    t_b = t_inv.copy()
    t_b[bottom] += rng.uniform(0.5, 1.5, t_b[bottom].shape).astype(np.float32)

    p_inv, p_a, p_b = (_prompt(rng, 4, 8) for _ in range(3))
    den = attractor_denoiser({
        default_condition_key(p): t
        for p, t in ((p_inv, t_inv), (p_a, t_a), (p_b, t_b))
    })
    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)

    zT, _, _ = run_inversion(z0, p_inv, den, schedule, steps)
    _, trace_adaptive = run_edit(
        zT, [p_a, p_b], p_inv, den, schedule, steps,
        mode="adaptive", formula=config.inversion_formula,
    )
    _, trace_mean = run_edit(
        zT, [p_a, p_b], p_inv, den, schedule, steps,
        mode="mean", formula=config.inversion_formula,
    )
    save_trace(out / "trace_adaptive.txt", trace_adaptive)
    save_trace(out / "trace_mean.txt", trace_mean)

    # one representative step: fused-residual norms against the branch norms
    terminal = steps.transitions()[-1][1]
    branches = branch_predictions(den, zT, schedule.abar(terminal), [p_a, p_b], p_inv)
    norm_a = residual_norm_map(branches.eps[0] - branches.eps_inv)
    norm_b = residual_norm_map(branches.eps[1] - branches.eps_inv)
    branch_max = np.maximum(norm_a, norm_b)
    fused_adaptive, _ = fuse_adaptive(branches)
    fused_mean = fuse_mean(branches)
    adaptive_norm = residual_norm_map(fused_adaptive - branches.eps_inv)
    mean_norm = residual_norm_map(fused_mean - branches.eps_inv)

    max_preserved = bool(np.array_equal(adaptive_norm, branch_max))
    support = branch_max > 0
    attenuation = mean_norm[support] / branch_max[support]
    half = float(np.max(np.abs(attenuation - 0.5)))

    passed = max_preserved and half <= 1e-6
    lines = (
        "scenario: ablation",
        f"adaptive per-patch residual norm == max branch norm: "
        f"{'exact' if max_preserved else 'VIOLATED'}",
        f"mean-fusion attenuation on disjoint supports: max |ratio - 1/2| = {half:.3e}",
        f"result: {'PASS' if passed else 'FAIL'}",
    )
    return DemoResult("ablation", passed, lines)


SCENARIOS = {
    "roundtrip": demo_roundtrip,
    "disjoint": demo_disjoint,
    "magnitude": demo_magnitude,
    "ablation": demo_ablation,
}


def _prompt(rng: np.random.Generator, length: int, dim: int) -> PromptEmbedding:
    return PromptEmbedding(rng.standard_normal((length, dim)).astype(np.float32))


def _well_conditioned_map(
    rng: np.random.Generator, d_out: int, d_in: int,
    sigma_min: float = 0.5, sigma_max: float = 5.0,
) -> np.ndarray:
    """Random matrix with singular values in [sigma_min, sigma_max]."""
    u, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    v, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    k = min(d_out, d_in)
    sigma = np.zeros((d_out, d_in))
    sigma[np.arange(k), np.arange(k)] = np.linspace(sigma_min, sigma_max, k)
    return u @ sigma @ v.T


def _distance(z: np.ndarray, reference: np.ndarray, region) -> float:
    return float(np.linalg.norm(z[region] - reference[region]))
