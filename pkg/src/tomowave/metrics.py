"""Image/field comparison metrics used across tests and the CLI."""

import numpy as np


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def relative_l2(candidate, reference):
    """||candidate - reference||_2 / ||reference||_2."""
    a, b = _pair(candidate, reference)
    denom = np.linalg.norm(b)
    if denom == 0:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a - b) / denom)


def relative_rms(candidate, reference):
    """Alias of relative_l2 (RMS ratios cancel the sample count)."""
    return relative_l2(candidate, reference)


def relative_linf(candidate, reference):
    """max|candidate - reference| / max|reference|."""
    a, b = _pair(candidate, reference)
    denom = np.abs(b).max()
    if denom == 0:
        return float(np.abs(a).max())
    return float(np.abs(a - b).max() / denom)


def psnr(candidate, reference):
    """Peak signal-to-noise ratio in dB against the reference dynamic range."""
    a, b = _pair(candidate, reference)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    peak = float(b.max() - b.min())
    if peak == 0:
        peak = float(np.abs(b).max()) or 1.0
    return float(20.0 * np.log10(peak) - 10.0 * np.log10(mse))
