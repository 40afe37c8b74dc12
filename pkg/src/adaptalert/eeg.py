"""Signal path from raw multichannel recordings to classifier-ready images.

Zero-phase band-pass filtering, FastICA artifact decomposition and
back-projection, stimulus-locked epoching with pre-stimulus baseline
correction, amplitude-based epoch rejection, and a Hanning-taper sliding
window time-frequency transform whose output feeds the classifier.

Epoch geometry is fixed at 250 Hz: 50 pre-stimulus and 250 post-stimulus
samples (-200 ms to +996 ms, stimulus at index 50).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as spsignal

FS = 250.0
PRE_SAMPLES = 50
POST_SAMPLES = 250
EPOCH_SAMPLES = PRE_SAMPLES + POST_SAMPLES

#: Time-frequency grid: 500 ms Hanning window, 50 ms hops, 2 Hz bins.
TFR_FREQS_HZ = np.arange(2.0, 41.0, 2.0)  # 20 bins
TFR_TIMES_MS = np.arange(50.0, 751.0, 50.0)  # 15 centers
TFR_WINDOW_SAMPLES = 125

REJECT_THRESHOLD_UV = 100.0


@dataclass
class Recording:
    """Continuous multichannel signal with stimulus markers.

    samples are [n_channels x n_samples] in microvolts; markers are
    (sample_index, metadata) pairs within the sample range.
    """

    samples: np.ndarray
    fs: float
    channel_labels: list
    markers: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise ValueError("samples must be [n_channels x n_samples]")
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")
        if len(self.channel_labels) != self.samples.shape[0]:
            raise ValueError("one label per channel required")
        for idx, _ in self.markers:
            if not 0 <= idx < self.samples.shape[1]:
                raise ValueError(f"marker {idx} outside the recording")

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]


@dataclass
class EegEpoch:
    """One stimulus-locked segment, [n_channels x 300] at 250 Hz."""

    samples: np.ndarray
    metadata: dict = field(default_factory=dict)
    baseline_corrected: bool = False
    fs: float = FS

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2 or self.samples.shape[1] != EPOCH_SAMPLES:
            raise ValueError(f"epoch must be [n_channels x {EPOCH_SAMPLES}]")

    @property
    def times_ms(self):
        return (np.arange(EPOCH_SAMPLES) - PRE_SAMPLES) / self.fs * 1000.0


@dataclass
class TfrMap:
    """Per-trial power, [n_channels x n_freqs x n_times] (uV^2)."""

    power: np.ndarray
    freqs_hz: np.ndarray
    times_ms: np.ndarray
    normalization: str
    metadata: dict = field(default_factory=dict)


def bandpass_filter(rec: Recording, low_hz: float = 0.1, high_hz: float = 40.0) -> Recording:
    """Zero-phase Butterworth band-pass (order 4 forward + backward)."""
    if not 0 < low_hz < high_hz:
        raise ValueError("need 0 < low < high")
    if high_hz >= rec.fs / 2.0:
        raise ValueError("high edge must sit below the Nyquist frequency")
    sos = spsignal.butter(4, [low_hz, high_hz], btype="bandpass", fs=rec.fs, output="sos")
    filtered = spsignal.sosfiltfilt(sos, rec.samples, axis=1)
    return Recording(
        samples=filtered,
        fs=rec.fs,
        channel_labels=list(rec.channel_labels),
        markers=list(rec.markers),
    )


# ---------------------------------------------------------------------------
# FastICA
# ---------------------------------------------------------------------------

@dataclass
class IcaDecomposition:
    """Whitened fixed-point ICA of a recording."""

    mean: np.ndarray  # [n_channels]
    unmixing: np.ndarray  # [k x n_channels], sources = unmixing @ (X - mean)
    mixing: np.ndarray  # [n_channels x k]
    sources: np.ndarray  # [k x n_samples]
    whitened_w: np.ndarray  # [k x k], orthonormal in whitened space
    converged: bool
    n_iterations: int
    fs: float
    channel_labels: list
    markers: list


def _sym_decorrelate(W):
    vals, vecs = np.linalg.eigh(W @ W.T)
    return vecs @ np.diag(1.0 / np.sqrt(np.maximum(vals, 1e-18))) @ vecs.T @ W


def fastica(
    rec: Recording,
    n_components: int | None = None,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> IcaDecomposition:
    """Blind source separation by symmetric fixed-point iteration.

    Whitens via the covariance eigendecomposition, then iterates the
    log-cosh (tanh) contrast with symmetric decorrelation until the largest
    rotation of any unmixing row falls below `tol`. A rank-deficient
    covariance reduces the component count with a warning.
    """
    X = np.asarray(rec.samples, dtype=float)
    n_ch, n_samp = X.shape
    k = n_ch if n_components is None else int(n_components)
    if k > n_ch:
        raise ValueError("cannot extract more components than channels")
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    cov = Xc @ Xc.T / (n_samp - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    usable = int(np.sum(vals > 1e-12 * vals[0]))
    if usable < k:
        warnings.warn(f"rank-deficient data: reducing {k} components to {usable}")
        k = usable
    whitening = (vecs[:, :k] / np.sqrt(vals[:k])[None, :]).T  # [k x n_ch]
    Z = whitening @ Xc

    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        WZ = W @ Z
        G = np.tanh(WZ)
        g_prime_mean = (1.0 - G**2).mean(axis=1)
        W_new = (G @ Z.T) / n_samp - g_prime_mean[:, None] * W
        W_new = _sym_decorrelate(W_new)
        rotation = float(np.max(np.abs(np.abs(np.sum(W_new * W, axis=1)) - 1.0)))
        W = W_new
        if rotation < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"FastICA did not converge in {max_iter} iterations")

    unmixing = W @ whitening
    sources = unmixing @ Xc
    mixing = np.linalg.pinv(unmixing)
    return IcaDecomposition(
        mean=mean,
        unmixing=unmixing,
        mixing=mixing,
        sources=sources,
        whitened_w=W,
        converged=converged,
        n_iterations=it,
        fs=rec.fs,
        channel_labels=list(rec.channel_labels),
        markers=list(rec.markers),
    )


def remove_components(decomp: IcaDecomposition, indices) -> Recording:
    """Back-project with the given source components zeroed."""
    k = decomp.sources.shape[0]
    indices = sorted(set(int(i) for i in indices))
    if any(i < 0 or i >= k for i in indices):
        raise ValueError("component index out of range")
    keep = [i for i in range(k) if i not in indices]
    cleaned = decomp.mean[:, None] + decomp.mixing[:, keep] @ decomp.sources[keep]
    return Recording(
        samples=cleaned,
        fs=decomp.fs,
        channel_labels=list(decomp.channel_labels),
        markers=list(decomp.markers),
    )


def high_variance_components(decomp: IcaDecomposition, share: float = 0.5) -> list:
    """Components carrying more than `share` of total back-projected variance;
    a crude screen for dominant artifacts when no manual pick exists."""
    proj_var = (decomp.mixing**2).sum(axis=0) * decomp.sources.var(axis=1)
    total = proj_var.sum()
    if total <= 0:
        return []
    return [int(i) for i in np.nonzero(proj_var / total > share)[0]]


# ---------------------------------------------------------------------------
# Epoching
# ---------------------------------------------------------------------------

def epoch_segment(rec: Recording) -> list:
    """Cut [-200, +1000) ms windows around each marker (stimulus at index 50).

    Markers lacking 50 samples of history or 250 of future are skipped with
    a warning; surviving epochs keep their marker metadata and input order.
    """
    if rec.fs != FS:
        raise ValueError(f"epoch geometry is defined at {FS:g} Hz")
    epochs = []
    for idx, meta in rec.markers:
        if idx < PRE_SAMPLES or idx + POST_SAMPLES > rec.n_samples:
            warnings.warn(f"marker at sample {idx} too close to an edge; trial skipped")
            continue
        window = rec.samples[:, idx - PRE_SAMPLES : idx + POST_SAMPLES].copy()
        epochs.append(EegEpoch(samples=window, metadata=dict(meta)))
    return epochs


def baseline_correct(epoch: EegEpoch) -> EegEpoch:
    """Subtract each channel's mean over the 200 ms pre-stimulus span."""
    baseline = epoch.samples[:, :PRE_SAMPLES].mean(axis=1, keepdims=True)
    return EegEpoch(
        samples=epoch.samples - baseline,
        metadata=dict(epoch.metadata),
        baseline_corrected=True,
        fs=epoch.fs,
    )


def reject_artifacts(epochs, threshold_uv: float = REJECT_THRESHOLD_UV):
    """Split epochs into (kept, rejected).

    An epoch is rejected iff any sample on any channel strictly exceeds
    +-threshold; a sample at exactly the threshold is kept.
    """
    kept, rejected = [], []
    for ep in epochs:
        if np.any(np.abs(ep.samples) > threshold_uv):
            rejected.append(ep)
        else:
            kept.append(ep)
    return kept, rejected


# ---------------------------------------------------------------------------
# Time-frequency transform
# ---------------------------------------------------------------------------

def _tfr_center_indices():
    # centers on the millisecond grid, snapped to the nearest sample with
    # exact halves rounded down (alternating 13/12-sample hops keeps the
    # last 125-sample window inside the epoch)
    positions = PRE_SAMPLES + TFR_TIMES_MS / 1000.0 * FS
    return np.ceil(positions - 0.5).astype(int)


_TFR_CENTERS = _tfr_center_indices()


def _tfr_basis():
    taper = np.hanning(TFR_WINDOW_SAMPLES)
    t = np.arange(TFR_WINDOW_SAMPLES) / FS
    basis = taper[:, None] * np.exp(-2j * np.pi * TFR_FREQS_HZ[None, :] * t[:, None])
    # scaled so a unit-amplitude sinusoid at a bin frequency gives power ~ 1
    norm = 2.0 / taper.sum()
    return basis, norm


_TFR_BASIS, _TFR_NORM = _tfr_basis()


def tfr_hanning(epoch: EegEpoch) -> TfrMap:
    """Hanning-taper sliding-window power, 2-40 Hz by 2 Hz, 50-750 ms by 50 ms.

    Each 500 ms window is tapered and correlated with complex exponentials;
    power is the squared magnitude scaled by (2 / taper sum)^2 so a unit
    sinusoid at a bin frequency yields power near 1.
    """
    if not epoch.baseline_corrected:
        raise ValueError("epoch must be baseline-corrected before the transform")
    half = TFR_WINDOW_SAMPLES // 2
    power = np.empty((epoch.samples.shape[0], TFR_FREQS_HZ.size, TFR_TIMES_MS.size))
    for ti, center in enumerate(_TFR_CENTERS):
        window = epoch.samples[:, center - half : center - half + TFR_WINDOW_SAMPLES]
        spectrum = window @ _TFR_BASIS
        power[:, :, ti] = np.abs(spectrum * _TFR_NORM) ** 2
    return TfrMap(
        power=power,
        freqs_hz=TFR_FREQS_HZ.copy(),
        times_ms=TFR_TIMES_MS.copy(),
        normalization="amplitude: |taper-weighted DFT| * 2/sum(taper), squared",
        metadata=dict(epoch.metadata),
    )


def tfr_to_image(tfr: TfrMap) -> np.ndarray:
    """Log power z-scored over all cells; constant maps map to all zeros."""
    logp = np.log10(tfr.power + 1e-12)
    sd = logp.std()
    # summation noise makes std of a constant array ~1e-16, not 0
    if sd <= 1e-12 * max(1.0, float(np.abs(logp).max())):
        return np.zeros_like(logp)
    return (logp - logp.mean()) / sd


# ---------------------------------------------------------------------------
# Flat binary + JSON header interchange
# ---------------------------------------------------------------------------

def save_recording(rec: Recording, bin_path, json_path):
    np.ascontiguousarray(rec.samples, dtype="<f4").tofile(bin_path)
    header = {
        "fs": rec.fs,
        "n_channels": rec.n_channels,
        "n_samples": rec.n_samples,
        "labels": list(rec.channel_labels),
        "markers": [[int(i), m] for i, m in rec.markers],
        "dtype": "<f4",
        "layout": "channel x sample",
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_recording(bin_path, json_path) -> Recording:
    with open(json_path) as fh:
        header = json.load(fh)
    samples = np.fromfile(bin_path, dtype="<f4").reshape(
        header["n_channels"], header["n_samples"]
    )
    return Recording(
        samples=samples.astype(float),
        fs=header["fs"],
        channel_labels=list(header["labels"]),
        markers=[(int(i), m) for i, m in header["markers"]],
    )


def save_epochs(epochs, bin_path, json_path):
    if epochs:
        stack = np.stack([ep.samples for ep in epochs])
    else:
        stack = np.zeros((0, 0, EPOCH_SAMPLES))
    np.ascontiguousarray(stack, dtype="<f4").tofile(bin_path)
    header = {
        "fs": FS,
        "n_epochs": len(epochs),
        "n_channels": int(stack.shape[1]) if epochs else 0,
        "n_samples": EPOCH_SAMPLES,
        "metadata": [ep.metadata for ep in epochs],
        "baseline_corrected": [bool(ep.baseline_corrected) for ep in epochs],
        "dtype": "<f4",
        "layout": "epoch x channel x sample",
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_epochs(bin_path, json_path):
    with open(json_path) as fh:
        header = json.load(fh)
    stack = np.fromfile(bin_path, dtype="<f4").reshape(
        header["n_epochs"], header["n_channels"], header["n_samples"]
    )
    return [
        EegEpoch(
            samples=stack[i].astype(float),
            metadata=header["metadata"][i],
            baseline_corrected=header["baseline_corrected"][i],
            fs=header["fs"],
        )
        for i in range(header["n_epochs"])
    ]


def save_tfr_images(images, metadata_list, bin_path, json_path):
    """Persist a stack of z-scored TFR images with their trial metadata."""
    arr = np.ascontiguousarray(np.stack(images) if len(images) else np.zeros((0,)), dtype="<f4")
    arr.tofile(bin_path)
    header = {
        "n_images": len(images),
        "shape": list(arr.shape[1:]) if len(images) else [],
        "freqs_hz": [float(f) for f in TFR_FREQS_HZ],
        "times_ms": [float(t) for t in TFR_TIMES_MS],
        "metadata": list(metadata_list),
        "dtype": "<f4",
        "layout": "image x channel x freq x time",
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_tfr_images(bin_path, json_path):
    with open(json_path) as fh:
        header = json.load(fh)
    shape = [header["n_images"]] + list(header["shape"])
    arr = np.fromfile(bin_path, dtype="<f4").reshape(shape)
    return arr.astype(float), header["metadata"]
