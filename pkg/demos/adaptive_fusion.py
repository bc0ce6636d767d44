"""Why averaging noise predictions washes edits out, and what to do instead.

Two editing prompts each want to change a different quadrant of the latent.
Averaging their noise predictions halves each edit's residual; the adaptive
rule keeps, per spatial location, the residual with the largest channel
norm, so both edits survive at full strength.  With disjoint edits the
adaptive result is indistinguishable from a single run whose target merges
both edits.
"""

import numpy as np

from promptfuse import (
    BranchSet,
    PromptEmbedding,
    attractor_denoiser,
    build_schedule,
    default_condition_key,
    fuse_adaptive,
    fuse_mean,
    residual_norm_map,
    run_edit,
    run_inversion,
    select_timesteps,
)

rng = np.random.default_rng(1)
shape = (4, 16, 16)
quad_a = (slice(None), slice(0, 8), slice(0, 8))      # top-left
quad_b = (slice(None), slice(8, 16), slice(8, 16))    # bottom-right

z0 = rng.standard_normal(shape).astype(np.float32)
t_inv = rng.standard_normal(shape).astype(np.float32)
t_a = t_inv.copy(); t_a[quad_a] += 1.0                # edit A: push the top-left
t_b = t_inv.copy(); t_b[quad_b] += 1.0                # edit B: push the bottom-right
t_merged = t_inv.copy(); t_merged[quad_a] += 1.0; t_merged[quad_b] += 1.0

def prompt():
    return PromptEmbedding(rng.standard_normal((4, 8)).astype(np.float32))

p_inv, p_a, p_b, p_merged = prompt(), prompt(), prompt(), prompt()
den = attractor_denoiser({
    default_condition_key(p): t
    for p, t in ((p_inv, t_inv), (p_a, t_a), (p_b, t_b), (p_merged, t_merged))
})

schedule = build_schedule(1000)
steps = select_timesteps(schedule, 50)
zT, _, _ = run_inversion(z0, p_inv, den, schedule, steps)

# one step in isolation: look at the residual geometry
eps_inv = den.predict(zT, schedule.abar(999), p_inv)
branches = BranchSet(
    eps_inv=eps_inv,
    eps=(den.predict(zT, schedule.abar(999), p_a),
         den.predict(zT, schedule.abar(999), p_b)),
)
fused_mean = fuse_mean(branches)
fused_adaptive, selection = fuse_adaptive(branches)
norm_a = residual_norm_map(branches.eps[0] - eps_inv)
print("residual support per branch (nonzero locations):",
      int((norm_a > 0).sum()), "of", norm_a.size)
print("selection map quadrant winners: top-left ->",
      selection[:8, :8].max(), " bottom-right ->", selection[8:, 8:].min())
mean_norm = residual_norm_map(fused_mean - eps_inv)
adaptive_norm = residual_norm_map(fused_adaptive - eps_inv)
support = norm_a > 0
print(f"mean fusion keeps {np.mean(mean_norm[support] / norm_a[support]):.2f} "
      "of branch A's residual; adaptive keeps "
      f"{np.mean(adaptive_norm[support] / norm_a[support]):.2f}")

# full runs: adaptive reproduces the merged-target edit, mean falls short
z_adaptive, _ = run_edit(zT, [p_a, p_b], p_inv, den, schedule, steps, mode="adaptive")
z_mean, _ = run_edit(zT, [p_a, p_b], p_inv, den, schedule, steps, mode="mean")
z_merged, _ = run_edit(zT, [p_merged], p_inv, den, schedule, steps, mode="single")

print(f"\nadaptive vs merged-target run: max abs gap "
      f"{np.abs(z_adaptive - z_merged).max():.2e}")
for name, quad in (("A", quad_a), ("B", quad_b)):
    da = np.linalg.norm(z_adaptive[quad] - z_merged[quad])
    dm = np.linalg.norm(z_mean[quad] - z_merged[quad])
    print(f"quadrant {name}: adaptive lands {da:.2e} from the merged edit, "
          f"mean lands {dm:.2f} away")
