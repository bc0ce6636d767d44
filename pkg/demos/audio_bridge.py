"""Carry an aligned-space audio vector into the diffusion prompt space.

The two spaces are linked by a bias-free linear map M.  Forward is easy:
project and normalize.  Backward needs care because M may be ill-posed, so
the bridge solves a ridge-regularized least squares problem and rescales by
the inversion prompt's norm.  The round trip should barely move the vector
when the regularizer is small against M's spectrum.
"""

import numpy as np

from promptfuse import (
    PromptEmbedding,
    assemble_prompt,
    inversion_norm,
    invert_to_sd,
    pool_embedding,
    project_to_clip,
    scale_magnitude,
)

rng = np.random.default_rng(1)
d = 16
LAMBDA = 1e-5

# a well-conditioned stand-in for the text encoder's projection
u, _ = np.linalg.qr(rng.standard_normal((d, d)))
v, _ = np.linalg.qr(rng.standard_normal((d, d)))
mapping = u @ np.diag(np.linspace(0.5, 5.0, d)) @ v.T

inv_seq = PromptEmbedding(rng.standard_normal((7, d)).astype(np.float32))
pooled = pool_embedding(inv_seq, "last-token")
print(f"pooled inversion embedding, norm {np.linalg.norm(pooled):.3f}")

forward = project_to_clip(pooled, mapping)
print(f"forward projection has unit norm: {np.linalg.norm(forward):.12f}")

# a unit "audio" vector already living in the aligned space
audio = rng.standard_normal(d)
audio /= np.linalg.norm(audio)

norm = inversion_norm(inv_seq)
bridged = invert_to_sd(audio, mapping, norm, LAMBDA)
cosine = project_to_clip(bridged, mapping) @ audio
print(f"bridge round trip cosine(project(invert(a)), a) = {cosine:.9f}")

prompt = assemble_prompt(bridged, inv_seq)
print(f"assembled prompt: {prompt.length} x {prompt.dim} "
      f"(special tokens kept, {prompt.length - 2} replicated rows)")

# magnitude modulation: scaling the audio vector scales the bridged rows
for s in (0.5, 1.0, 2.0):
    scaled = invert_to_sd(scale_magnitude(audio, s), mapping, norm, LAMBDA)
    print(f"scale {s:3.1f}: bridged-row norm {np.linalg.norm(scaled):.4f}")
