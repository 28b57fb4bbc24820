"""Motion features, vector quantization, and robot-centric position indices.

Motion is represented as per-tick joint positions: each trajectory waypoint
becomes one frame of a T x d matrix in the fixed order
[left joints..., right joints..., torso lift].

The quantizer is a linear autoencoder around a learnable codebook: frames
are encoded to a latent, snapped to the nearest code (ties break to the
lowest index), decoded with a straight-through substitution, and trained
with a three-part loss: reconstruction, a codebook term weighted by alpha,
and a commitment term weighted by beta, each averaged over frames.
Stop-gradient means the bracketed quantity is held constant in derivative
computations. Codes themselves learn through exponential-moving-average
count/sum statistics rather than gradients.

The motion position index for a grid token at (x, y) relative to a robot
centroid (x_r, y_r) at time t is (t, sign(y - y_r), sign(x - x_r)), with
sign(0) = 0 marking the centroid row/column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ArgumentError, TrainingError
from .kinematics import Trajectory
from .rng import SplitMix64

EMA_DECAY = 0.99
EMA_EPSILON = 1e-5
DEFAULT_CODES = 64
DEFAULT_LATENT = 8


@dataclass(frozen=True)
class MotionFeature:
    """T x d matrix of per-tick joint positions."""

    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ArgumentError("motion features must be a 2-D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ArgumentError("motion features must be finite")

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])


def extract_motion_feature(traj: Trajectory) -> MotionFeature:
    """One row per waypoint, in the documented joint order."""
    if len(traj) == 0:
        raise ArgumentError("trajectory has no waypoints")
    return MotionFeature(frames=np.array(traj.waypoints, dtype=float))


@dataclass
class Codebook:
    codes: np.ndarray  # (M, d')
    ema_counts: np.ndarray  # (M,)
    ema_sums: np.ndarray  # (M, d')
    decay: float = EMA_DECAY

    def __post_init__(self):
        if self.codes.shape[0] < 1:
            raise ArgumentError("codebook must contain at least one code")
        if not 0.0 < self.decay < 1.0:
            raise ArgumentError("decay must lie in (0, 1)")
        if np.any(self.ema_counts < 0):
            raise ArgumentError("ema_counts must be non-negative")
        if not np.all(np.isfinite(self.codes)):
            raise ArgumentError("codes must be finite")

    @property
    def size(self) -> int:
        return int(self.codes.shape[0])

    @property
    def dim(self) -> int:
        return int(self.codes.shape[1])


def make_codebook(codes: np.ndarray, decay: float = EMA_DECAY) -> Codebook:
    """Fresh codebook with zeroed EMA statistics.

    Starting counts and sums at zero makes the decay series cancel in the
    sums/counts ratio, so a code tracks the running mean of its assigned
    latents exactly; the seed codes only serve the first assignment.
    """
    codes = np.array(codes, dtype=float)
    return Codebook(
        codes=codes,
        ema_counts=np.zeros(codes.shape[0]),
        ema_sums=np.zeros_like(codes),
        decay=decay,
    )


@dataclass
class LinearAutoencoder:
    """Linear encoder/decoder pair standing in for the neural tokenizer."""

    encoder: np.ndarray  # (d', d)
    decoder: np.ndarray  # (d, d')

    def __post_init__(self):
        if not (np.all(np.isfinite(self.encoder)) and np.all(np.isfinite(self.decoder))):
            raise ArgumentError("autoencoder weights must be finite")

    def encode(self, frames: np.ndarray) -> np.ndarray:
        return frames @ self.encoder.T

    def decode(self, latents: np.ndarray) -> np.ndarray:
        return latents @ self.decoder.T


def quantize(z: np.ndarray, cb: Codebook) -> tuple[int, np.ndarray]:
    """Nearest code by Euclidean distance; ties break to the lowest index."""
    z = np.asarray(z, dtype=float)
    if z.shape != (cb.dim,):
        raise ArgumentError(f"latent has shape {z.shape}, codebook dim is {cb.dim}")
    d = np.sum((cb.codes - z) ** 2, axis=1)
    idx = int(np.argmin(d))
    return idx, cb.codes[idx].copy()


def quantize_batch(z: np.ndarray, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    d = ((z[:, None, :] - cb.codes[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d, axis=1)
    return idx, cb.codes[idx]


def vqvae_loss(
    m: MotionFeature,
    ae: LinearAutoencoder,
    cb: Codebook,
    alpha: float,
    beta: float,
) -> tuple[float, float, float, float]:
    """(total, reconstruction, codebook term, commitment term), frame-averaged.

    Reconstruction decodes the quantized code (straight-through value);
    the codebook term is alpha * ||sg[z] - e||^2 and the commitment term is
    beta * ||z - sg[e]||^2.
    """
    if alpha < 0 or beta < 0:
        raise ArgumentError("alpha and beta must be non-negative")
    frames = m.frames
    if frames.shape[1] != ae.encoder.shape[1]:
        raise ArgumentError(
            f"feature dim {frames.shape[1]} does not match encoder input {ae.encoder.shape[1]}"
        )
    t = frames.shape[0]
    z = ae.encode(frames)
    _, e = quantize_batch(z, cb)
    recon = float(np.sum((ae.decode(e) - frames) ** 2)) / t
    codebook_term = alpha * float(np.sum((z - e) ** 2)) / t
    commitment_term = beta * float(np.sum((z - e) ** 2)) / t
    total = recon + codebook_term + commitment_term
    return total, recon, codebook_term, commitment_term


def vqvae_gradients(
    frames: np.ndarray,
    ae: LinearAutoencoder,
    cb: Codebook,
    alpha: float,
    beta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (dL/dE, dL/dD) under stop-gradient semantics.

    The decoder path sees the straight-through latent (gradient flows to the
    encoder as if e were z); the codebook term contributes no encoder or
    decoder gradient; the commitment term pulls z toward its (frozen) code.
    """
    t = frames.shape[0]
    z = ae.encode(frames)
    _, e = quantize_batch(z, cb)
    recon_err = ae.decode(e) - frames  # (T, d)
    # straight-through: d recon / d z = recon_err @ D
    g_z = (2.0 / t) * (recon_err @ ae.decoder) + (2.0 * beta / t) * (z - e)
    g_encoder = g_z.T @ frames
    g_decoder = (2.0 / t) * (recon_err.T @ e)
    return g_encoder, g_decoder


def ema_update(cb: Codebook, batch: Sequence[tuple[np.ndarray, int]]) -> Codebook:
    """Fold a batch of (latent, assigned index) into the EMA statistics.

    counts and sums decay together, so the sums/counts ratio of an entry
    is untouched by batches that do not assign to it; entries whose count
    has (decayed to) zero keep their current code. The epsilon floor keeps
    the division finite.
    """
    counts = np.zeros(cb.size)
    sums = np.zeros_like(cb.ema_sums)
    for z, idx in batch:
        if not 0 <= idx < cb.size:
            raise ArgumentError(f"code index {idx} out of range")
        counts[idx] += 1.0
        sums[idx] += np.asarray(z, dtype=float)
    new_counts = cb.decay * cb.ema_counts + (1.0 - cb.decay) * counts
    new_sums = cb.decay * cb.ema_sums + (1.0 - cb.decay) * sums
    active = new_counts > EMA_EPSILON
    new_codes = cb.codes.copy()
    new_codes[active] = new_sums[active] / np.maximum(new_counts[active], EMA_EPSILON)[:, None]
    return Codebook(codes=new_codes, ema_counts=new_counts, ema_sums=new_sums, decay=cb.decay)


def train_quantizer(
    dataset: Sequence[MotionFeature],
    epochs: int = 200,
    alpha: float = 1.0,
    beta: float = 0.25,
    lr: float = 0.05,
    seed: int = 0,
    n_codes: int = DEFAULT_CODES,
    latent_dim: int = DEFAULT_LATENT,
    decay: float = EMA_DECAY,
) -> tuple[LinearAutoencoder, Codebook, list[float]]:
    """Full-batch gradient descent on the linear maps plus EMA code updates.

    Deterministic for a given (dataset, seed, hyperparameters). Returns the
    trained autoencoder, codebook, and per-epoch total-loss history.
    """
    if not dataset:
        raise ArgumentError("dataset must be non-empty")
    frames = np.vstack([m.frames for m in dataset])
    d = frames.shape[1]
    gen = SplitMix64(seed)
    scale = 1.0 / math.sqrt(d)
    encoder = np.array(
        [[(gen.random() * 2 - 1) * scale for _ in range(d)] for _ in range(latent_dim)]
    )
    decoder = np.array(
        [[(gen.random() * 2 - 1) * scale for _ in range(latent_dim)] for _ in range(d)]
    )
    ae = LinearAutoencoder(encoder=encoder, decoder=decoder)

    # seed codes from evenly spaced encoded frames (deterministic)
    z0 = ae.encode(frames)
    picks = np.linspace(0, frames.shape[0] - 1, n_codes).astype(int)
    cb = make_codebook(z0[picks], decay=decay)

    mf = MotionFeature(frames=frames)
    history: list[float] = []
    for epoch in range(epochs):
        total, recon, cterm, bterm = vqvae_loss(mf, ae, cb, alpha, beta)
        if not math.isfinite(total):
            raise TrainingError(f"loss diverged ({total})", epoch)
        history.append(total)
        g_e, g_d = vqvae_gradients(frames, ae, cb, alpha, beta)
        ae = LinearAutoencoder(encoder=ae.encoder - lr * g_e, decoder=ae.decoder - lr * g_d)
        z = ae.encode(frames)
        idx, _ = quantize_batch(z, cb)
        cb = ema_update(cb, list(zip(z, idx)))
    return ae, cb, history


# ---------------------------------------------------------------------------
# Motion position embedding indices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PositionIndex:
    t: int
    sy: int
    sx: int

    def __post_init__(self):
        if self.sy not in (-1, 0, 1) or self.sx not in (-1, 0, 1):
            raise ArgumentError("spatial signs must be in {-1, 0, 1}")


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def position_index(t: int, x: int, y: int, centroid: tuple[int, int]) -> PositionIndex:
    """(t, sign(y - y_r), sign(x - x_r)) for a token at (x, y)."""
    x_r, y_r = centroid
    return PositionIndex(t=t, sy=_sign(y - y_r), sx=_sign(x - x_r))


def position_index_grid(t: int, height: int, width: int, centroid: tuple[int, int]) -> list[list[list[int]]]:
    """Per-token integer triples for an H x W token grid."""
    x_r, y_r = centroid
    return [
        [[t, _sign(y - y_r), _sign(x - x_r)] for x in range(width)]
        for y in range(height)
    ]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def codebook_to_dict(cb: Codebook) -> dict:
    return {
        "codes": cb.codes.tolist(),
        "ema_counts": cb.ema_counts.tolist(),
        "ema_sums": cb.ema_sums.tolist(),
        "decay": cb.decay,
        "size": cb.size,
        "dim": cb.dim,
    }


def codebook_from_dict(doc: dict) -> Codebook:
    return Codebook(
        codes=np.array(doc["codes"], dtype=float),
        ema_counts=np.array(doc["ema_counts"], dtype=float),
        ema_sums=np.array(doc["ema_sums"], dtype=float),
        decay=float(doc["decay"]),
    )


def autoencoder_to_dict(ae: LinearAutoencoder) -> dict:
    return {
        "encoder": ae.encoder.tolist(),
        "decoder": ae.decoder.tolist(),
        "input_dim": int(ae.encoder.shape[1]),
        "latent_dim": int(ae.encoder.shape[0]),
    }


def autoencoder_from_dict(doc: dict) -> LinearAutoencoder:
    return LinearAutoencoder(
        encoder=np.array(doc["encoder"], dtype=float),
        decoder=np.array(doc["decoder"], dtype=float),
    )


def save_quantizer(path: str, ae: LinearAutoencoder, cb: Codebook) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"autoencoder": autoencoder_to_dict(ae), "codebook": codebook_to_dict(cb)},
            fh,
            indent=2,
        )


def load_quantizer(path: str) -> tuple[LinearAutoencoder, Codebook]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return autoencoder_from_dict(doc["autoencoder"]), codebook_from_dict(doc["codebook"])
