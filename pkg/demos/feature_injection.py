"""Capture features during inversion, inject them while editing.

Structure-preserving editors record internal denoiser state on the way up
and substitute it on the way down.  Here the toy analogue stores each step's
implied clean sample and prediction; injection blends the editing-time clean
sample toward the stored one.  blend=0 leaves the edit untouched, blend=1
replays the inversion exactly, and values in between trade edit strength
against fidelity to the source.
"""

import numpy as np

from promptfuse import (
    PromptEmbedding,
    attractor_denoiser,
    build_schedule,
    default_condition_key,
    run_edit,
    run_inversion,
    select_timesteps,
)

rng = np.random.default_rng(1)
shape = (4, 8, 8)

z0 = rng.standard_normal(shape).astype(np.float32)
t_inv = rng.standard_normal(shape).astype(np.float32)
t_edit = t_inv + rng.uniform(0.5, 1.5, shape).astype(np.float32)

p_inv = PromptEmbedding(rng.standard_normal((4, 8)).astype(np.float32))
p_edit = PromptEmbedding(rng.standard_normal((4, 8)).astype(np.float32))
den = attractor_denoiser({
    default_condition_key(p_inv): t_inv,
    default_condition_key(p_edit): t_edit,
})

schedule = build_schedule(1000)
steps = select_timesteps(schedule, 50)

# capture populates one ("x0", "eps") pair per transition
zT, _, store = run_inversion(z0, p_inv, den, schedule, steps, capture=True)
print(f"captured {store.count('x0')} clean-sample estimates during inversion")

recon, _ = run_edit(zT, [p_inv], p_inv, den, schedule, steps, mode="single")

print("\nblend   edit strength (vs recon)   distance to source z0")
for blend in (0.0, 0.25, 0.5, 0.75, 1.0):
    edited, _ = run_edit(
        zT, [p_edit], p_inv, den, schedule, steps,
        mode="single", feature_store=store, blend=blend,
    )
    strength = np.linalg.norm(edited - recon)
    fidelity = np.linalg.norm(edited - z0)
    print(f"{blend:5.2f}   {strength:17.4f}       {fidelity:12.4e}")

# blend=1 substitutes the stored predictions outright, which unwinds the
# inversion step for step: the "edit" collapses back onto the source latent
# (distance to z0 drops to float rounding), while blend=0 applies the edit
# at full strength

