"""Band-limited Gaussian random fields for initial conditions."""

from __future__ import annotations

import numpy as np

from ..rng import Xoshiro256StarStar


def band_limited_field(
    gen: Xoshiro256StarStar,
    height: int,
    width: int,
    max_mode: int = 4,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Real zero-mean random field with spectral support |k| <= max_mode.

    Coefficients are drawn in a fixed mode order so the field is a pure
    function of the generator state. The DC mode is excluded, giving an
    exactly zero-mean field after the final mean subtraction.
    """
    kr = np.fft.fftfreq(height, d=1.0 / height).astype(np.int64)
    kc = np.fft.fftfreq(width, d=1.0 / width).astype(np.int64)
    spectrum = np.zeros((height, width), dtype=np.complex128)
    for i in range(height):
        for j in range(width):
            radius = np.hypot(kr[i], kc[j])
            if radius == 0 or radius > max_mode:
                continue
            re = gen.normal()
            im = gen.normal()
            spectrum[i, j] = re + 1j * im
    field = np.fft.ifft2(spectrum).real * (height * width)
    field -= field.mean()
    std = field.std()
    if std > 0:
        field *= amplitude / std
    return field
