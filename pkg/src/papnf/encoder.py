"""Numerical embedding, reprogramming to backbone width, prefix prompting.

The look-back window is encoded twice: a single global vector from the whole
flattened window (fed to fusion downstream) and a per-patch token sequence
that, after reprogramming into the backbone's hidden width, sits behind K
trainable prefix rows as the backbone input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from papnf import tensor as tz
from papnf.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class PatchConfig:
    """Fixed-length patching along time; the ragged tail is zero-padded."""

    lookback: int
    patch_len: int

    def __post_init__(self):
        if self.lookback <= 0 or self.patch_len <= 0:
            raise ValueError("lookback and patch_len must be positive")
        if self.patch_len > self.lookback:
            raise ValueError(
                f"patch_len {self.patch_len} exceeds lookback {self.lookback}"
            )

    @property
    def n_patches(self) -> int:
        return math.ceil(self.lookback / self.patch_len)


def patchify(x_std: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """Cut a standardized (L, C) window into (M, patch_len*C) rows.

    Patch m covers rows [m*p, (m+1)*p), flattened row-major so channels stay
    interleaved per time step; a short final patch is zero-padded.
    """
    x = np.asarray(x_std, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != cfg.lookback:
        raise ShapeError(f"expected ({cfg.lookback}, C) window, got {x.shape}")
    p, c = cfg.patch_len, x.shape[1]
    m = cfg.n_patches
    padded = np.zeros((m * p, c))
    padded[: x.shape[0]] = x
    return padded.reshape(m, p * c)


def unpatchify(patches: np.ndarray, cfg: PatchConfig, channels: int) -> np.ndarray:
    """Inverse of patchify (drops the zero padding)."""
    m = cfg.n_patches
    flat = np.asarray(patches).reshape(m * cfg.patch_len, channels)
    return flat[: cfg.lookback].copy()


class NumericalEncoder:
    """Two trainable affine encodings of one window.

    global path:  z = W @ flatten(x) + b              -> (1, d_n)
    patch path:   Z = patches @ W_patch^T + b_patch   -> (M, d_n)
    """

    def __init__(self, lookback: int, channels: int, patch_len: int, d_n: int, rng: np.random.Generator):
        self.patch_cfg = PatchConfig(lookback, patch_len)
        self.channels = channels
        self.d_n = d_n
        flat_dim = lookback * channels
        patch_dim = patch_len * channels
        self.W = Tensor(rng.normal(size=(d_n, flat_dim)) / math.sqrt(flat_dim), requires_grad=True)
        self.b = Tensor(np.zeros(d_n), requires_grad=True)
        self.W_patch = Tensor(
            rng.normal(size=(d_n, patch_dim)) / math.sqrt(patch_dim), requires_grad=True
        )
        self.b_patch = Tensor(np.zeros(d_n), requires_grad=True)

    def encode_global(self, x_std: np.ndarray) -> Tensor:
        flat = np.asarray(x_std, dtype=np.float64).reshape(1, -1)
        if flat.shape[1] != self.W.shape[1]:
            raise ShapeError(
                f"window flattens to {flat.shape[1]} values, encoder expects {self.W.shape[1]}"
            )
        return tz.add_rowvec(Tensor(flat) @ self.W.T, self.b)

    def encode_patches(self, x_std: np.ndarray) -> Tensor:
        patches = patchify(x_std, self.patch_cfg)
        return tz.add_rowvec(Tensor(patches) @ self.W_patch.T, self.b_patch)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "encoder.W": self.W,
            "encoder.b": self.b,
            "encoder.W_patch": self.W_patch,
            "encoder.b_patch": self.b_patch,
        }


class Reprogrammer:
    """Affine map from numeric embedding width d_n to backbone width d."""

    def __init__(self, d_n: int, d: int, rng: np.random.Generator):
        self.W_p = Tensor(rng.normal(size=(d, d_n)) / math.sqrt(d_n), requires_grad=True)
        self.b_p = Tensor(np.zeros(d), requires_grad=True)

    def reprogram(self, z_rows: Tensor) -> Tensor:
        if z_rows.shape[1] != self.W_p.shape[1]:
            raise ShapeError(
                f"reprogram: rows have width {z_rows.shape[1]}, expected {self.W_p.shape[1]}"
            )
        return tz.add_rowvec(z_rows @ self.W_p.T, self.b_p)

    def parameters(self) -> dict[str, Tensor]:
        return {"reprogram.W_p": self.W_p, "reprogram.b_p": self.b_p}


class PrefixBank:
    """K trainable rows prepended to the reprogrammed patch tokens."""

    def __init__(self, k: int, d: int, rng: np.random.Generator):
        if k < 0:
            raise ValueError(f"prefix length must be >= 0, got {k}")
        self.k = k
        self.d = d
        self.P = Tensor(rng.normal(size=(k, d)) * 0.02, requires_grad=True) if k > 0 else None

    def parameters(self) -> dict[str, Tensor]:
        return {} if self.P is None else {"prefix.P": self.P}


def build_llm_input(prefix: PrefixBank, e_rep: Tensor) -> Tensor:
    """Stack [P; E_rep] into the (K+M, d) backbone input."""
    if e_rep.shape[1] != prefix.d:
        raise ShapeError(
            f"token width {e_rep.shape[1]} does not match prefix width {prefix.d}"
        )
    if prefix.P is None:
        return e_rep
    return tz.concat_rows([prefix.P, e_rep])
