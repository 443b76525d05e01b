"""Iterative complex FFTs: radix-2 for powers of two, Bluestein otherwise.

Unnormalized forward convention throughout: X_k = sum_j x_j e^{-2 pi i j k / n},
inverse divides by n.  Under that convention Parseval reads
sum |X|^2 = n * sum |x|^2.  The 1-D kernels run on the last axis of a
(batch, n) array so a 2-D transform is two vectorized passes; odd lengths go
through the Bluestein chirp (a_j = x_j e^{-i pi j^2/n} convolved against the
conjugate chirp via zero-padded power-of-two FFTs).
"""

from __future__ import annotations

import numpy as np


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Forward FFT on the last axis; length must be a power of two."""
    batch, n = x.shape
    if n == 1:
        return x.astype(np.complex128, copy=True)
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    y = x[:, rev].astype(np.complex128)
    half = 1
    while half < n:
        tw = np.exp(-1j * np.pi * np.arange(half) / half)
        blk = y.reshape(batch, n // (2 * half), 2 * half)
        even = blk[:, :, :half].copy()
        odd = blk[:, :, half:] * tw
        blk[:, :, :half] = even + odd
        blk[:, :, half:] = even - odd
        half *= 2
    return y


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    batch, n = x.shape
    m = 1 << (2 * n - 1).bit_length()
    j = np.arange(n)
    # phase of e^{-i pi j^2 / n}, argument reduced mod 2n to stay accurate
    chirp = np.exp(-1j * np.pi * ((j * j) % (2 * n)) / n)
    a = np.zeros((batch, m), dtype=np.complex128)
    a[:, :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b[None, :]))
    return conv[:, :n] * chirp


def _fft_last(x: np.ndarray) -> np.ndarray:
    if _is_pow2(x.shape[-1]):
        return _fft_pow2(x)
    return _fft_bluestein(x)


def fft1d(x) -> np.ndarray:
    """Forward DFT of a 1-D sequence (real or complex), unnormalized."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"fft1d wants a nonempty 1-D sequence, got shape {arr.shape}")
    return _fft_last(arr[None, :])[0]


def ifft1d(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"ifft1d wants a nonempty 1-D sequence, got shape {arr.shape}")
    return np.conj(_fft_last(np.conj(arr)[None, :]))[0] / arr.size


def fft2d(x) -> np.ndarray:
    """Forward DFT over both axes of a 2-D array, unnormalized."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"fft2d wants a nonempty 2-D array, got shape {arr.shape}")
    out = _fft_last(arr)
    out = _fft_last(out.T.copy()).T
    return np.ascontiguousarray(out)


def ifft2d(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"ifft2d wants a nonempty 2-D array, got shape {arr.shape}")
    return np.conj(fft2d(np.conj(arr))) / arr.size
