"""Walk a latent up the noise schedule and back down again.

The deterministic sampler admits an exact inverse: push a clean latent to
pure noise with the inversion update, pull it back with the matching
sampling update, and you land on the original values.  This script shows
the round trip with a state-independent denoiser (exact to float precision)
and with the standard DDIM formula for comparison.
"""

import numpy as np

from promptfuse import (
    PromptEmbedding,
    build_schedule,
    constant_denoiser,
    run_edit,
    run_inversion,
    select_timesteps,
)

rng = np.random.default_rng(1)

# the scaled-linear schedule used by SD-family models: 1000 training steps,
# abar falling from ~0.999 to ~0.0047
schedule = build_schedule(1000)
print(f"abar_0 = {schedule.abar(0):.6f}, abar_999 = {schedule.abar(999):.6f}")

steps = select_timesteps(schedule, 50)
print(f"visiting {len(steps)} timesteps, stride {steps.steps[1]}, "
      f"{len(steps.transitions())} transitions (last one reaches t=999)")

z0 = rng.standard_normal((4, 8, 8)).astype(np.float32)
field = (0.5 * rng.standard_normal((4, 8, 8))).astype(np.float32)
prompt = PromptEmbedding(rng.standard_normal((4, 8)).astype(np.float32))
den = constant_denoiser(field)  # eps ignores the latent: round trip is exact

zT, trajectory, _ = run_inversion(z0, prompt, den, schedule, steps)
print(f"\ninverted: |z_0| = {np.abs(z0).max():.3f} -> |z_T| = {np.abs(zT).max():.3f} "
      f"({len(trajectory)} latents recorded)")

for formula in ("paper-exact-inverse", "standard-ddim"):
    recon, _ = run_edit(zT, [prompt], prompt, den, schedule, steps,
                        mode="single", formula=formula)
    err = np.abs(recon - z0).max()
    print(f"sampling back with {formula:20s}: max abs error {err:.3e}")

# the exact-inverse mode reconstructs to ~1e-14; the standard formula differs
# because the printed inversion update is not its algebraic inverse
