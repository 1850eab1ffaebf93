"""Two-phase motion transfer.

Phase 1 noises the reference clip to each step of the guidance window and
freezes the reference conditional scores there. Phase 2 regenerates from
the strength-noised reference under the target condition, mixing the
frozen scores in on the window steps only.

The window starts at the inversion step and walks towards the data end,
i.e. it covers the highest-noise steps of the reverse chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from msgtransfer.guidance import MODES, GuidanceSpec
from msgtransfer.sampler import SamplerConfig, forward_noise, sample
from msgtransfer.schedule import NoiseSchedule, strength_to_step, window_steps
from msgtransfer.videocore import SeededRng, load_archive, save_archive


@dataclass
class TransferConfig:
    strength: float = 0.7
    window_ratio: float = 0.1
    w_msg: float = 1.0
    mode: str = "msg"
    cfg_scale: float | None = None  # defaults to 1 + w_msg
    noise_mode: str = "stochastic"
    final_denoise: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.strength <= 1:
            raise ValueError(f"strength must lie in (0, 1], got {self.strength}")
        if not 0 < self.window_ratio <= 1:
            raise ValueError(f"window_ratio must lie in (0, 1], got {self.window_ratio}")
        if self.w_msg < 0:
            raise ValueError(f"w_msg must be >= 0, got {self.w_msg}")
        if self.mode not in MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}")

    def guidance(self, window: list[int]) -> GuidanceSpec:
        if self.mode == "cfg":
            lam = 1.0 + self.w_msg if self.cfg_scale is None else self.cfg_scale
            return GuidanceSpec("cfg", lam, window)
        return GuidanceSpec(self.mode, self.w_msg, window)


@dataclass
class MotionEntry:
    step: int
    time: float
    latent: np.ndarray
    cond_score: np.ndarray
    uncond_score: np.ndarray | None = None


@dataclass
class MotionRepresentation:
    entries: list[MotionEntry]
    ref_condition: object
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> list[int]:
        return [e.step for e in self.entries]

    def as_reference(self) -> dict:
        return {e.step: {"cond": e.cond_score, "uncond": e.uncond_score} for e in self.entries}

    def save(self, path) -> None:
        tensors = {}
        for e in self.entries:
            tensors[f"latent_{e.step}"] = e.latent
            tensors[f"cond_{e.step}"] = e.cond_score
            if e.uncond_score is not None:
                tensors[f"uncond_{e.step}"] = e.uncond_score
        y = self.ref_condition
        save_archive(path, tensors, dict(
            kind="motion", steps=self.steps, times=[e.time for e in self.entries],
            ref_condition=None if y is None else np.asarray(y).tolist(), seed=self.seed, **self.meta))

    @classmethod
    def load(cls, path) -> "MotionRepresentation":
        tensors, meta = load_archive(path)
        if meta.get("kind") != "motion":
            raise ValueError(f"{path} is not a motion representation archive")
        entries = [
            MotionEntry(k, t, tensors[f"latent_{k}"], tensors[f"cond_{k}"], tensors.get(f"uncond_{k}"))
            for k, t in zip(meta["steps"], meta["times"])
        ]
        extra = {k: v for k, v in meta.items() if k not in ("kind", "steps", "times", "ref_condition", "seed", "tensors")}
        return cls(entries, meta["ref_condition"], meta["seed"], extra)


def transfer_window(s: NoiseSchedule, tc: TransferConfig) -> tuple[int, list[int]]:
    start = strength_to_step(s, tc.strength)
    return start, window_steps(s, start, tc.window_ratio)


def extract_motion(ref_clip: np.ndarray, ref_y, field, s: NoiseSchedule, tc: TransferConfig,
                   rng: SeededRng, with_uncond: bool | None = None) -> MotionRepresentation:
    """Noise the reference to every window step and record its scores there.

    Each step gets its own noise stream ``rng.spawn(step)``. The reference
    unconditional score is also kept when ``with_uncond`` (default: usg mode).
    """
    start, window = transfer_window(s, tc)
    if with_uncond is None:
        with_uncond = tc.mode == "usg"
    entries = []
    for k in window:
        # scores are taken at the stored (float32) latent so an entry is self-consistent
        zk = forward_noise(ref_clip, k, s, rng.spawn(k)).astype(np.float32).astype(np.float64)
        entries.append(MotionEntry(
            k, s.time_of(k), zk.astype(np.float32), field.score(zk, k, ref_y),
            field.score(zk, k, None) if with_uncond else None,
        ))
    return MotionRepresentation(entries, ref_y, rng.seed, dict(start_step=start))


def transfer(ref_clip: np.ndarray, ref_y, target_y, field, s: NoiseSchedule, tc: TransferConfig,
             rng: SeededRng | None = None, motion: MotionRepresentation | None = None,
             trace: list | None = None) -> np.ndarray:
    """Extract (unless ``motion`` is given) then regenerate under ``target_y``.

    Streams are split off ``rng`` by purpose (``extract``, ``invert``,
    ``sample``), so the guidance mode and weight never change which random
    numbers are drawn. Leading batch axes on ``ref_clip`` are supported for
    the learned field with per-item ``ref_y``/``target_y`` arrays.
    """
    rng = rng or SeededRng(tc.seed)
    start, window = transfer_window(s, tc)
    if tc.mode in ("msg", "usg") and motion is None:
        motion = extract_motion(ref_clip, ref_y, field, s, tc, rng.spawn("extract"))
    if motion is not None and tc.mode in ("msg", "usg"):
        if motion.steps != window:
            raise ValueError(f"motion representation covers steps {motion.steps}, window is {window}")
        if tc.mode == "usg" and any(e.uncond_score is None for e in motion.entries):
            raise ValueError("usg guidance needs reference unconditional scores")
    init = forward_noise(ref_clip, start, s, rng.spawn("invert"))
    guidance = tc.guidance(window)
    cfg = SamplerConfig(start_step=start, noise_mode=tc.noise_mode, final_denoise=tc.final_denoise)
    reference = motion.as_reference() if motion is not None else None
    return sample(field, guidance, cfg, s, target_y, rng.spawn("sample"), init=init,
                  reference=reference, trace=trace)


def regenerate(ref_clip, target_y, field, s: NoiseSchedule, tc: TransferConfig, rng: SeededRng | None = None):
    """Conditional regeneration from the same inversion start, no guidance."""
    tc_plain = TransferConfig(**{**tc.__dict__, "mode": "conditional"})
    return transfer(ref_clip, None, target_y, field, s, tc_plain, rng)
