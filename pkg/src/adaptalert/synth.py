"""Ground-truth generators that make every validation check self-contained.

Three families: behavioral trial sets simulated from known race-model
parameters, profile-structured accuracy matrices for the clustering and
ANOVA checks, and multichannel recordings whose post-stimulus oscillations
encode performance class (band) and hazard task (frequency offset), so
classifiers trained downstream have a knowable signal to find.

Every generator is a pure function of its spec and seed; written files are
byte-identical across reruns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import eeg, lba
from .lba import HAZARD_TYPES, LbaParams, Trial
from .nn import CLASS_NAMES


def _default_lba_params():
    # edge-protection hazards carry the highest caution (k, A), structural
    # instability the lowest, echoing the behavioral ordering under study
    return {
        "EL": LbaParams(v_correct=2.5, v_error=1.2, A=0.6, k=0.5, psi=0.28),
        "LEP": LbaParams(v_correct=2.2, v_error=1.0, A=0.8, k=0.9, psi=0.30),
        "SI": LbaParams(v_correct=1.8, v_error=1.1, A=0.5, k=0.3, psi=0.22),
    }


@dataclass(frozen=True)
class SynthSpec:
    """Everything the generators need, with paper-shaped defaults."""

    seed: int = 0
    lba_params: dict = field(default_factory=_default_lba_params)
    trial_counts: dict = field(
        default_factory=lambda: {"EL": 640, "LEP": 781, "SI": 293}
    )
    n_participants: int = 70
    profile_means: tuple = ((0.85, 0.85, 0.85), (0.65, 0.65, 0.65), (0.45, 0.45, 0.45))
    profile_sd: float = 0.05
    profile_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    class_bands_hz: dict = field(
        default_factory=lambda: {"High": 10.0, "Medium": 18.0, "Low": 26.0}
    )
    task_offsets_hz: dict = field(
        default_factory=lambda: {"EL": 0.0, "LEP": 2.0, "SI": 4.0}
    )
    osc_amplitude_uv: float = 4.0
    noise_sd_uv: float = 6.0
    n_channels: int = 32

    def __post_init__(self):
        for hz, n in self.trial_counts.items():
            if n <= 0:
                raise ValueError(f"trial count for {hz} must be positive")
        if self.osc_amplitude_uv < 0 or self.noise_sd_uv < 0:
            raise ValueError("amplitudes cannot be negative")
        for task in self.task_offsets_hz:
            bands = [
                self.class_bands_hz[c] + self.task_offsets_hz[task]
                for c in CLASS_NAMES
            ]
            for bfreq in bands:
                if not 2.0 <= bfreq <= 40.0:
                    raise ValueError(f"band {bfreq} Hz outside the 2-40 Hz range")
            bands.sort()
            gaps = np.diff(bands)
            if np.any(gaps <= 2.0):
                raise ValueError(
                    f"class bands collide within 2 Hz in task {task}; "
                    "separability would be destroyed"
                )


# ---------------------------------------------------------------------------
# Behavioral trials
# ---------------------------------------------------------------------------

def gen_lba_trials(spec: SynthSpec):
    """Simulated trials per hazard type from the spec's true parameters."""
    trials = []
    for idx, hazard in enumerate(HAZARD_TYPES):
        if hazard not in spec.trial_counts:
            continue
        params = spec.lba_params[hazard]
        n = spec.trial_counts[hazard]
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 10, idx]))
        rt, correct = lba.simulate_decision_outcomes(params, n, rng)
        pid_cycle = max(1, spec.n_participants)
        for i in range(n):
            trials.append(
                Trial(
                    rt=float(rt[i]),
                    response="hazardous" if correct[i] else "safe",
                    hazard_type=hazard,
                    correct=bool(correct[i]),
                    participant_id=f"p{i % pid_cycle:03d}",
                )
            )
    return trials


def gen_lba_dataset(spec: SynthSpec, csv_path, provenance_path):
    """Write the trials CSV plus a provenance file with the true parameters."""
    trials = gen_lba_trials(spec)
    lba.write_trials_csv(csv_path, trials)
    provenance = {
        "seed": spec.seed,
        "trial_counts": dict(spec.trial_counts),
        "true_params": {
            hz: {
                "v_correct": p.v_correct,
                "v_error": p.v_error,
                "A": p.A,
                "k": p.k,
                "psi": p.psi,
                "s": p.s,
            }
            for hz, p in spec.lba_params.items()
        },
    }
    with open(provenance_path, "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
    return trials


# ---------------------------------------------------------------------------
# Accuracy matrices
# ---------------------------------------------------------------------------

def gen_behavior_matrix(spec: SynthSpec, n_participants: int | None = None):
    """Profile-structured accuracies, clipped to [0, 1].

    Returns (participant_ids, matrix [n x 3], true profile indices).
    """
    n = spec.n_participants if n_participants is None else int(n_participants)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 20]))
    weights = np.asarray(spec.profile_weights, dtype=float)
    weights = weights / weights.sum()
    labels = rng.choice(len(weights), size=n, p=weights)
    means = np.asarray(spec.profile_means, dtype=float)
    matrix = np.clip(
        means[labels] + rng.normal(0.0, spec.profile_sd, size=(n, means.shape[1])),
        0.0,
        1.0,
    )
    ids = [f"p{i:03d}" for i in range(n)]
    return ids, matrix, labels


def gen_hazard_accuracies(means, sds, n: int, rng, rho: float = 0.6):
    """Per-hazard accuracy samples with matched marginal moments.

    One ability draw per participant shifts every hazard column (the
    within-subject design), which preserves the marginal means/sds while
    concentrating between-group contrasts.
    """
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    ability = rng.normal(size=n)
    cols = []
    for j in range(means.size):
        noise = rng.normal(size=n)
        cols.append(
            means[j]
            + sds[j] * (math.sqrt(rho) * ability + math.sqrt(1.0 - rho) * noise)
        )
    return cols


# ---------------------------------------------------------------------------
# Synthetic recordings and epochs
# ---------------------------------------------------------------------------

_LEAD_SAMPLES = 200
_SLOT_SAMPLES = 400  # 300-sample epoch plus inter-trial gap


def _pink_noise(rng, n_ch, n_samp, sd):
    """1/f-shaped background noise with roughly the requested RMS."""
    if sd == 0.0:
        return np.zeros((n_ch, n_samp))
    white = rng.standard_normal((n_ch, n_samp))
    spectrum = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samp, 1.0 / eeg.FS)
    spectrum *= 1.0 / np.sqrt(np.maximum(freqs, 1.0))
    x = np.fft.irfft(spectrum, n=n_samp, axis=1)
    return x * (sd / x.std())


def gen_task_recording(spec: SynthSpec, task: str, n_per_class: int, seed_path=()):
    """One continuous recording for a hazard task.

    Trials are laid out in 400-sample slots; each post-stimulus second
    carries a class-band oscillation at (class band + task offset) with a
    random phase per trial and channel, on top of pink background noise.
    Markers carry {"hazard_type", "label"} metadata. Samples are rounded to
    float32 so files round-trip losslessly.
    """
    if task not in spec.task_offsets_hz:
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 30, *seed_path]))
    n_trials = n_per_class * len(CLASS_NAMES)
    n_samp = 2 * _LEAD_SAMPLES + n_trials * _SLOT_SAMPLES
    samples = _pink_noise(rng, spec.n_channels, n_samp, spec.noise_sd_uv)

    labels = np.repeat(np.arange(len(CLASS_NAMES)), n_per_class)
    rng.shuffle(labels)
    t_post = np.arange(eeg.POST_SAMPLES) / eeg.FS
    markers = []
    for i, label_idx in enumerate(labels):
        onset = _LEAD_SAMPLES + i * _SLOT_SAMPLES + eeg.PRE_SAMPLES
        freq = spec.class_bands_hz[CLASS_NAMES[label_idx]] + spec.task_offsets_hz[task]
        phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_channels)
        osc = spec.osc_amplitude_uv * np.sin(
            2.0 * np.pi * freq * t_post[None, :] + phases[:, None]
        )
        samples[:, onset : onset + eeg.POST_SAMPLES] += osc
        markers.append((onset, {"hazard_type": task, "label": CLASS_NAMES[label_idx]}))

    samples = samples.astype(np.float32).astype(float)
    return eeg.Recording(
        samples=samples,
        fs=eeg.FS,
        channel_labels=[f"ch{c:02d}" for c in range(spec.n_channels)],
        markers=markers,
    )


def gen_synthetic_epochs(spec: SynthSpec, n_per_class_per_task: int):
    """Labeled baseline-corrected epochs for every task.

    Returns {task_tag: list of EegEpoch}; epoch metadata carries the task
    tag and performance label.
    """
    out = {}
    for t_idx, task in enumerate(sorted(spec.task_offsets_hz)):
        rec = gen_task_recording(spec, task, n_per_class_per_task, seed_path=(t_idx,))
        epochs = [eeg.baseline_correct(ep) for ep in eeg.epoch_segment(rec)]
        out[task] = epochs
    return out
