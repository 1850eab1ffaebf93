"""Score combinators: classifier-free, unconditional-reference and mixture guidance.

All three reduce to ``base + weight * (plus - minus)`` evaluated through one
helper, so identities between them hold bit for bit:

* CFG with scale lam: ``cond + (lam - 1) * (cond - uncond)``, the same affine
  map as ``(1 - lam) * uncond + lam * cond``.
* MSG: ``cond + w * (ref_cond - uncond)``.
* USG: ``cond + w * (ref_uncond - uncond)``.

With ``ref_cond == cond`` MSG equals CFG at ``lam = 1 + w`` exactly whenever
``(1 + w) - 1 == w`` in floating point (true for any w on a 2**-52 grid
in [0, 1]).

MSG is also the drift of Langevin dynamics on the mixed potential
``U_content + w (U_motion - U_prior)``: each potential's gradient is the
matching score, so :func:`mixed_potential_drift` returns the same array.
The split of a conditional score into a motion part and a content part is
not a separate operation here; with the reference held fixed, the motion
term has zero gradient in z, so the operational content is MSG itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Mode = Literal["conditional", "cfg", "usg", "msg"]
MODES = ("conditional", "cfg", "usg", "msg")


def _check(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"score shape mismatch: {shape} vs {np.shape(a)}")


def _guided(base, plus, minus, weight):
    return base + weight * (plus - minus)


def cfg_combine(uncond, cond, lam: float):
    _check(uncond, cond)
    return _guided(cond, cond, uncond, lam - 1.0)


def msg_combine(cond, ref_cond, uncond, w_msg: float):
    _check(cond, ref_cond, uncond)
    return _guided(cond, ref_cond, uncond, w_msg)


def usg_combine(cond, ref_uncond, uncond, w: float):
    _check(cond, ref_uncond, uncond)
    return _guided(cond, ref_uncond, uncond, w)


def mixed_potential_drift(cond, ref_cond, uncond, w_msg: float):
    """Gradient of the mixed potential; identical to :func:`msg_combine`."""
    return msg_combine(cond, ref_cond, uncond, w_msg)


@dataclass
class GuidanceSpec:
    """Which combinator runs, with what weight, on which reverse steps.

    ``weight`` is lam for ``cfg`` and w for ``usg``/``msg``. Steps outside
    ``window`` always use the plain conditional score.
    """

    mode: Mode = "conditional"
    weight: float = 1.0
    window: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ("usg", "msg") and self.weight < 0:
            raise ValueError(f"{self.mode} weight must be >= 0, got {self.weight}")
        if self.mode != "conditional" and not self.window:
            raise ValueError(f"{self.mode} guidance needs a non-empty window")

    def active(self, step: int) -> bool:
        return self.mode != "conditional" and step in self.window


def guided_score(field, z, step: int, y, spec: GuidanceSpec, reference: dict | None = None):
    """Score used by the sampler at ``step``.

    ``reference`` maps step -> ``{"cond": ..., "uncond": ...}`` precomputed
    reference scores (``cond`` needed by msg, ``uncond`` by usg).
    """
    cond = field.score(z, step, y)
    if not spec.active(step):
        return cond
    uncond = field.score(z, step, None)
    if spec.mode == "cfg":
        return cfg_combine(uncond, cond, spec.weight)
    key = "cond" if spec.mode == "msg" else "uncond"
    try:
        ref = reference[step][key]
    except (TypeError, KeyError):
        raise KeyError(f"{spec.mode} guidance needs the reference {key} score for step {step}") from None
    ref = np.broadcast_to(ref, np.shape(cond))
    if spec.mode == "msg":
        return msg_combine(cond, ref, uncond, spec.weight)
    return usg_combine(cond, ref, uncond, spec.weight)
