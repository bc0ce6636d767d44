"""Command-line surface: invert, edit, bridge, demo.

Manifests are flat key-value documents (same syntax as config files) whose
paths resolve relative to the manifest's own directory.  An edit manifest
names the latent, the inversion prompt, the denoiser targets, and one entry
per editing prompt:

    latent = z0.nbt
    inv_prompt = inv.nbt
    denoiser = attractor            # or: constant (+ constant_value = c.nbt)
    inv_target = t_inv.nbt
    map = M.nbt                     # required when audio prompts are present
    prompt.1.text = p1.nbt
    prompt.1.target = t1.nbt
    prompt.2.audio = a2.nbt
    prompt.2.scale = 2.0
    prompt.2.target = t2.nbt
    uncond_prompt = un.nbt          # optional, for guidance_scale != 1
    uncond_target = t_un.nbt
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import demos
from .bridge import (
    PromptEmbedding,
    assemble_prompt,
    inversion_norm,
    invert_to_sd,
    pool_embedding,
    project_to_clip,
    scale_magnitude,
)
from .config import ConfigError, PipelineConfig, load_config, read_keyvalues, with_overrides
from .denoiser import attractor_denoiser, constant_denoiser, default_condition_key
from .fusion import save_trace
from .nbt import load_tensor, save_tensor
from .pipeline import run_edit, run_inversion
from .schedule import build_schedule, select_timesteps

_FORMULA_FLAGS = {"paper": "paper-exact-inverse", "standard": "standard-ddim"}


class ManifestError(ValueError):
    """Missing, malformed, or inconsistent manifest entries."""


@dataclass(frozen=True)
class PromptSource:
    """One editing prompt named by an edit manifest."""

    prompt_id: str
    kind: str  # "text" | "audio"
    path: Path
    scale: float | None
    target_path: Path | None


@dataclass(frozen=True)
class EditRequest:
    """Everything an edit run needs, as resolved file paths."""

    latent_path: Path
    inv_prompt_path: Path
    sources: tuple[PromptSource, ...]
    denoiser_kind: str
    constant_value_path: Path | None
    inv_target_path: Path | None
    map_path: Path | None
    uncond_prompt_path: Path | None
    uncond_target_path: Path | None


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures: typed diagnostic, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptfuse",
        description="Training-free multi-prompt latent diffusion editing engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    invert = sub.add_parser("invert", help="latent + prompt files -> noise + trajectory files")
    invert.add_argument("--manifest", required=True, type=Path)
    invert.add_argument("--out", required=True, type=Path)
    _common_flags(invert)
    invert.set_defaults(handler=_cmd_invert)

    edit = sub.add_parser("edit", help="edit manifest -> edited latent + trace files")
    edit.add_argument("--manifest", required=True, type=Path)
    edit.add_argument("--out", required=True, type=Path)
    edit.add_argument("--fusion", choices=("adaptive", "mean", "single"))
    edit.add_argument("--blend", type=float, default=0.0,
                      help="feature-injection blend in [0,1]; 0 disables")
    edit.add_argument("--scale", type=float, default=1.0,
                      help="default magnitude scale for audio prompts")
    _common_flags(edit)
    edit.set_defaults(handler=_cmd_edit)

    bridge = sub.add_parser("bridge", help="audio embedding + map + inversion prompt -> assembled prompt file")
    bridge.add_argument("--audio", required=True, type=Path)
    bridge.add_argument("--map", required=True, type=Path, dest="map_path")
    bridge.add_argument("--inv-prompt", required=True, type=Path)
    bridge.add_argument("--out", required=True, type=Path)
    bridge.add_argument("--scale", type=float, default=1.0)
    bridge.add_argument("--config", type=Path)
    bridge.set_defaults(handler=_cmd_bridge)

    demo = sub.add_parser("demo", help="run a built-in scenario and report pass/fail")
    demo.add_argument("scenario", choices=sorted(demos.SCENARIOS))
    demo.add_argument("--out", required=True, type=Path)
    demo.add_argument("--seed", type=int)
    demo.add_argument("--config", type=Path)
    demo.add_argument("--steps", type=int)
    demo.set_defaults(handler=_cmd_demo)

    return parser


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path)
    sub.add_argument("--steps", type=int, help="override num_ddim_steps")
    sub.add_argument("--formula", choices=sorted(_FORMULA_FLAGS))
    sub.add_argument("--save-trajectory", action="store_true")


def _load_cli_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["num_ddim_steps"] = args.steps
    if getattr(args, "formula", None):
        overrides["inversion_formula"] = _FORMULA_FLAGS[args.formula]
    if getattr(args, "fusion", None):
        overrides["fusion_mode"] = args.fusion
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return with_overrides(config, **overrides) if overrides else config.validate()


def _cmd_invert(args) -> int:
    config = _load_cli_config(args)
    request = _parse_edit_manifest(args.manifest, require_prompts=False)
    latent, inv_prompt, den, _ = _materialize(request, config, default_scale=1.0)
    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)
    zT, trajectory, _ = run_inversion(latent, inv_prompt, den, schedule, steps)
    out = _ensure_out(args.out)
    save_tensor(out / "z_T.nbt", zT)
    if args.save_trajectory:
        _save_trajectory(out, trajectory)
    print(f"inverted over {len(steps.transitions())} transitions -> {out / 'z_T.nbt'}")
    return 0


def _cmd_edit(args) -> int:
    config = _load_cli_config(args)
    request = _parse_edit_manifest(args.manifest, require_prompts=True)
    latent, inv_prompt, den, materials = _materialize(request, config, default_scale=args.scale)
    schedule = build_schedule(config.num_train_steps)
    steps = select_timesteps(schedule, config.num_ddim_steps)

    capture = args.blend > 0.0
    zT, trajectory, store = run_inversion(latent, inv_prompt, den, schedule, steps, capture=capture)
    edited, trace = run_edit(
        zT,
        materials.prompts,
        inv_prompt,
        den,
        schedule,
        steps,
        mode=config.fusion_mode,
        feature_store=store if capture else None,
        blend=args.blend,
        patch_size=config.patch_size,
        formula=config.inversion_formula,
        guidance_scale=config.guidance_scale,
        uncond_prompt=materials.uncond_prompt,
        prompt_ids=materials.prompt_ids,
    )
    out = _ensure_out(args.out)
    save_tensor(out / "edited.nbt", edited)
    save_trace(out / "trace.txt", trace)
    if args.save_trajectory:
        _save_trajectory(out, trajectory)
    print(
        f"edited with {len(materials.prompts)} prompt(s), fusion={config.fusion_mode} "
        f"-> {out / 'edited.nbt'}"
    )
    return 0


def _cmd_bridge(args) -> int:
    config = (load_config(args.config) if args.config else PipelineConfig()).validate()
    audio = load_tensor(args.audio)
    mapping = load_tensor(args.map_path)
    inv_prompt = PromptEmbedding(load_tensor(args.inv_prompt))

    inv_norm = inversion_norm(
        inv_prompt, config.inv_norm_mode, config.pooling, config.pooling_index
    )
    bridged = invert_to_sd(
        scale_magnitude(audio, args.scale), mapping, inv_norm, config.lambda_
    )
    prompt = assemble_prompt(bridged, inv_prompt, config.replication_count)
    out = _ensure_out(args.out)
    save_tensor(out / "bridged_prompt.nbt", prompt.tokens)

    pooled = pool_embedding(inv_prompt, config.pooling, config.pooling_index)
    forward = project_to_clip(pooled, mapping)
    audio_unit = np.asarray(audio, np.float64)
    audio_unit = audio_unit / np.linalg.norm(audio_unit)
    cosine = float(project_to_clip(bridged, mapping) @ audio_unit)
    print(f"inv_norm = {inv_norm:.12g}")
    print(f"forward_projection_norm = {float(np.linalg.norm(forward)):.12g}")
    print(f"bridge_cosine = {cosine:.12g}")
    print(f"assembled prompt ({prompt.length} x {prompt.dim}) -> {out / 'bridged_prompt.nbt'}")
    return 0


def _cmd_demo(args) -> int:
    config = _load_cli_config(args)
    result = demos.run_demo(args.scenario, args.out, config)
    for line in result.lines:
        print(line)
    return 0 if result.passed else 1


@dataclass(frozen=True)
class _Materials:
    prompts: tuple[PromptEmbedding, ...]
    prompt_ids: tuple[str, ...]
    uncond_prompt: PromptEmbedding | None


def _parse_edit_manifest(path: Path, require_prompts: bool) -> EditRequest:
    try:
        entries = read_keyvalues(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except ConfigError as exc:
        raise ManifestError(f"manifest {path}: {exc}") from exc
    base = path.parent

    def take(key, required=False):
        if key in entries:
            return base / entries.pop(key)
        if required:
            raise ManifestError(f"manifest {path}: missing required key {key!r}")
        return None

    latent = take("latent", required=True)
    inv_prompt = take("inv_prompt", required=True)
    denoiser_kind = entries.pop("denoiser", "attractor")
    if denoiser_kind not in ("attractor", "constant"):
        raise ManifestError(f"manifest {path}: unknown denoiser {denoiser_kind!r}")
    constant_value = take("constant_value")
    inv_target = take("inv_target")
    map_path = take("map")
    uncond_prompt = take("uncond_prompt")
    uncond_target = take("uncond_target")

    prompt_entries: dict[str, dict[str, str]] = {}
    for key in list(entries):
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "prompt":
            _, prompt_id, field = parts
            prompt_entries.setdefault(prompt_id, {})[field] = entries.pop(key)
    if entries:
        raise ManifestError(f"manifest {path}: unknown keys {sorted(entries)}")

    sources = []
    for prompt_id in sorted(prompt_entries):
        fields = prompt_entries[prompt_id]
        kinds = [k for k in ("text", "audio") if k in fields]
        if len(kinds) != 1:
            raise ManifestError(
                f"manifest {path}: prompt {prompt_id!r} needs exactly one of text/audio"
            )
        kind = kinds[0]
        scale = fields.pop("scale", None)
        if scale is not None and kind != "audio":
            raise ManifestError(
                f"manifest {path}: prompt {prompt_id!r}: scale applies to audio prompts"
            )
        target = fields.pop("target", None)
        source_path = fields.pop(kind)
        if fields:
            raise ManifestError(
                f"manifest {path}: prompt {prompt_id!r}: unknown fields {sorted(fields)}"
            )
        sources.append(
            PromptSource(
                prompt_id=prompt_id,
                kind=kind,
                path=base / source_path,
                scale=float(scale) if scale is not None else None,
                target_path=base / target if target is not None else None,
            )
        )
    if require_prompts and not sources:
        raise ManifestError(f"manifest {path}: at least one editing prompt is required")
    return EditRequest(
        latent_path=latent,
        inv_prompt_path=inv_prompt,
        sources=tuple(sources),
        denoiser_kind=denoiser_kind,
        constant_value_path=constant_value,
        inv_target_path=inv_target,
        map_path=map_path,
        uncond_prompt_path=uncond_prompt,
        uncond_target_path=uncond_target,
    )


def _materialize(request: EditRequest, config: PipelineConfig, default_scale: float):
    """Load every referenced file and build the prompts and denoiser."""
    latent = load_tensor(request.latent_path)
    inv_prompt = PromptEmbedding(load_tensor(request.inv_prompt_path))
    mapping = load_tensor(request.map_path) if request.map_path else None

    prompts = []
    prompt_ids = []
    targets = {}
    for source in request.sources:
        if source.kind == "text":
            prompt = PromptEmbedding(load_tensor(source.path))
        else:
            if mapping is None:
                raise ManifestError(
                    f"prompt {source.prompt_id!r} is audio but the manifest names no map"
                )
            audio = load_tensor(source.path)
            inv_norm = inversion_norm(
                inv_prompt, config.inv_norm_mode, config.pooling, config.pooling_index
            )
            bridged = invert_to_sd(
                scale_magnitude(audio, source.scale if source.scale is not None else default_scale),
                mapping,
                inv_norm,
                config.lambda_,
            )
            prompt = assemble_prompt(bridged, inv_prompt, config.replication_count)
        prompts.append(prompt)
        prompt_ids.append(source.prompt_id)
        if source.target_path is not None:
            targets[default_condition_key(prompt)] = load_tensor(source.target_path)

    uncond_prompt = (
        PromptEmbedding(load_tensor(request.uncond_prompt_path))
        if request.uncond_prompt_path
        else None
    )

    if request.denoiser_kind == "constant":
        if request.constant_value_path is None:
            raise ManifestError("constant denoiser needs constant_value")
        den = constant_denoiser(load_tensor(request.constant_value_path))
    else:
        if request.inv_target_path is None:
            raise ManifestError("attractor denoiser needs inv_target")
        targets[default_condition_key(inv_prompt)] = load_tensor(request.inv_target_path)
        if uncond_prompt is not None and request.uncond_target_path is not None:
            targets[default_condition_key(uncond_prompt)] = load_tensor(
                request.uncond_target_path
            )
        missing = [
            s.prompt_id for s, p in zip(request.sources, prompts)
            if default_condition_key(p) not in targets
        ]
        if missing:
            raise ManifestError(
                f"attractor denoiser needs a target for every prompt; missing {missing}"
            )
        den = attractor_denoiser(targets)

    return latent, inv_prompt, den, _Materials(
        prompts=tuple(prompts),
        prompt_ids=tuple(prompt_ids),
        uncond_prompt=uncond_prompt,
    )


def _save_trajectory(out: Path, trajectory) -> None:
    for i, (t, z) in enumerate(trajectory.entries):
        save_tensor(out / f"traj_{i:04d}_t{t:04d}.nbt", z)


def _ensure_out(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


if __name__ == "__main__":
    sys.exit(main())
