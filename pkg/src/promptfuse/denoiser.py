"""Denoiser contract, analytic toy denoisers, and feature capture/injection.

A Denoiser is a pure deterministic function eps(z_t, abar_t, cond).  Two toy
implementations make trajectories solvable in closed form:

* constant: eps is a fixed field, independent of state and condition --
  inversion/sampling round trips become provable identities.
* attractor: eps = (z_t - sqrt(abar_t) * target(cond)) / sqrt(1 - abar_t),
  the exact noise for which the implied clean sample equals the target, so
  sampling flows toward the condition's target.

Capture/injection stands in for feature-injection editing: during inversion a
wrapper records, per step, the implied clean sample (tag "x0") and the raw
prediction (tag "eps"); during editing a second wrapper blends the implied
clean sample toward the stored one and recomputes eps (blend=1 substitutes
the stored prediction verbatim).  The step index passed to predict is the
store key.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Mapping

import numpy as np

from .bridge import PromptEmbedding

X0_TAG = "x0"
EPS_TAG = "eps"


class UnknownConditionError(KeyError):
    """Condition key has no registered target."""


class FeatureStoreError(ValueError):
    """Base error for feature-store misuse."""


class DuplicateFeatureError(FeatureStoreError):
    """A (step, tag) slot was written twice."""


class MissingFeatureError(FeatureStoreError):
    """A (step, tag) slot was read before being written."""


class FeatureStore:
    """Write-once tensors keyed by (step index, layer tag)."""

    def __init__(self):
        self._entries: dict[tuple[int, str], np.ndarray] = {}

    def put(self, step: int, tag: str, tensor: np.ndarray) -> None:
        key = (int(step), str(tag))
        if key in self._entries:
            raise DuplicateFeatureError(f"feature {key} already captured")
        frozen = np.array(tensor, copy=True)
        frozen.flags.writeable = False
        self._entries[key] = frozen

    def get(self, step: int, tag: str) -> np.ndarray:
        key = (int(step), str(tag))
        try:
            return self._entries[key]
        except KeyError:
            raise MissingFeatureError(f"feature {key} was never captured") from None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[int, str]) -> bool:
        return (int(key[0]), str(key[1])) in self._entries

    def count(self, tag: str) -> int:
        return sum(1 for (_, t) in self._entries if t == tag)

    def steps(self, tag: str) -> tuple[int, ...]:
        return tuple(sorted(s for (s, t) in self._entries if t == tag))


def implied_x0(z_t: np.ndarray, abar_t: float, eps: np.ndarray) -> np.ndarray:
    """Clean-sample estimate: x0 = (z_t - sqrt(1-abar) eps) / sqrt(abar)."""
    _check_abar(abar_t)
    z_t = np.asarray(z_t, dtype=np.float64)
    return (z_t - math.sqrt(1.0 - abar_t) * np.asarray(eps, np.float64)) / math.sqrt(abar_t)


def eps_for_x0(z_t: np.ndarray, abar_t: float, x0: np.ndarray) -> np.ndarray:
    """Noise that makes the implied clean sample equal x0."""
    _check_abar(abar_t)
    z_t = np.asarray(z_t, dtype=np.float64)
    return (z_t - math.sqrt(abar_t) * np.asarray(x0, np.float64)) / math.sqrt(1.0 - abar_t)


def default_condition_key(cond) -> str:
    """Digest of the content (middle) rows; prompts differing only in the
    special tokens share a key.  Values are hashed in float64 so storage
    precision does not split keys."""
    tokens = cond.tokens if isinstance(cond, PromptEmbedding) else np.asarray(cond)
    middle = np.ascontiguousarray(tokens[1:-1], dtype=np.float64)
    digest = hashlib.sha1()
    digest.update(str(middle.shape).encode())
    digest.update(middle.tobytes())
    return digest.hexdigest()


class Denoiser:
    """Deterministic noise predictor; output shape equals the latent shape."""

    def predict(
        self,
        z_t: np.ndarray,
        abar_t: float,
        cond,
        step: int | None = None,
    ) -> np.ndarray:
        raise NotImplementedError


class ConstantDenoiser(Denoiser):
    """predict always returns the fixed field, whatever the state or prompt."""

    def __init__(self, c: np.ndarray):
        c = np.array(c, copy=True)
        c.flags.writeable = False
        self._c = c

    def predict(self, z_t, abar_t, cond, step=None):
        _check_abar(abar_t)
        z_t = np.asarray(z_t)
        if z_t.shape != self._c.shape:
            raise ValueError(
                f"latent shape {z_t.shape} != constant field shape {self._c.shape}"
            )
        return self._c

    @property
    def value(self) -> np.ndarray:
        return self._c


class AttractorDenoiser(Denoiser):
    """predict returns the exact noise pulling the implied clean sample onto
    the target registered for the condition's key."""

    def __init__(
        self,
        targets: Mapping[str, np.ndarray],
        key_of: Callable[[object], str] = default_condition_key,
    ):
        if not targets:
            raise ValueError("attractor needs at least one target")
        frozen = {}
        shape = None
        for key, target in targets.items():
            arr = np.array(target, copy=True)
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise ValueError(
                    f"targets must share one shape; {arr.shape} != {shape}"
                )
            arr.flags.writeable = False
            frozen[str(key)] = arr
        self._targets = frozen
        self._key_of = key_of

    def predict(self, z_t, abar_t, cond, step=None):
        key = self._key_of(cond)
        try:
            target = self._targets[key]
        except KeyError:
            raise UnknownConditionError(
                f"no target for condition key {key[:16]} ({len(self._targets)} registered)"
            ) from None
        z_t = np.asarray(z_t)
        if z_t.shape != target.shape:
            raise ValueError(
                f"latent shape {z_t.shape} != target shape {target.shape}"
            )
        return eps_for_x0(z_t, abar_t, target)

    def target_for(self, cond) -> np.ndarray:
        return self._targets[self._key_of(cond)]


def constant_denoiser(c: np.ndarray) -> ConstantDenoiser:
    return ConstantDenoiser(c)


def attractor_denoiser(
    targets: Mapping[str, np.ndarray],
    key_of: Callable[[object], str] = default_condition_key,
) -> AttractorDenoiser:
    return AttractorDenoiser(targets, key_of)


class _CapturingDenoiser(Denoiser):
    def __init__(self, inner: Denoiser, store: FeatureStore):
        self._inner = inner
        self._store = store

    def predict(self, z_t, abar_t, cond, step=None):
        eps = self._inner.predict(z_t, abar_t, cond, step=step)
        if step is None:
            raise FeatureStoreError("capture requires a step index")
        self._store.put(step, X0_TAG, implied_x0(z_t, abar_t, eps))
        self._store.put(step, EPS_TAG, eps)
        return eps


class _InjectingDenoiser(Denoiser):
    def __init__(self, inner: Denoiser, store: FeatureStore, blend: float):
        if not 0.0 <= blend <= 1.0:
            raise ValueError(f"blend must lie in [0, 1], got {blend}")
        self._inner = inner
        self._store = store
        self._blend = float(blend)

    def predict(self, z_t, abar_t, cond, step=None):
        if self._blend == 0.0:
            return self._inner.predict(z_t, abar_t, cond, step=step)
        if step is None:
            raise FeatureStoreError("injection requires a step index")
        if self._blend == 1.0:
            # full substitution: the captured prediction, verbatim
            return self._store.get(step, EPS_TAG)
        eps = self._inner.predict(z_t, abar_t, cond, step=step)
        stored = self._store.get(step, X0_TAG)
        blended = (1.0 - self._blend) * implied_x0(z_t, abar_t, eps) + self._blend * stored
        return eps_for_x0(z_t, abar_t, blended)


def capture_features(d: Denoiser, store: FeatureStore) -> Denoiser:
    """Wrap `d` so each predict records its implied x0 and raw prediction.

    Capture is an inversion-phase tool: slots are write-once, so the wrapped
    denoiser must be called once per step index.
    """
    return _CapturingDenoiser(d, store)


def inject_features(d: Denoiser, store: FeatureStore, blend: float) -> Denoiser:
    """Wrap `d` so the implied clean sample is pulled toward the stored one.

    blend=0 is the identity wrapper; blend=1 substitutes the stored
    prediction bitwise.
    """
    return _InjectingDenoiser(d, store, blend)


def _check_abar(abar_t: float) -> None:
    if not 0.0 < abar_t < 1.0:
        raise ValueError(f"abar_t must lie in (0, 1), got {abar_t}")
