"""Pattern statistics: dominant wavelength and local orientation."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def radial_spectrum(field, hx, hy=None):
    """Radially averaged power spectrum of a zero-mean field.

    Returns ``(k, power)`` with ``k`` in cycles per unit length.
    """
    hy = hx if hy is None else hy
    f = np.asarray(field, dtype=float)
    f = f - f.mean()
    ny, nx = f.shape
    win = np.outer(np.hanning(ny), np.hanning(nx))
    P = np.abs(np.fft.fft2(f * win)) ** 2
    kx = np.fft.fftfreq(nx, d=hx)
    ky = np.fft.fftfreq(ny, d=hy)
    K = np.hypot(*np.meshgrid(kx, ky))
    dk = max(1.0 / (nx * hx), 1.0 / (ny * hy))
    bins = np.rint(K / dk).astype(int)
    power = np.bincount(bins.ravel(), P.ravel())
    counts = np.bincount(bins.ravel())
    k = np.arange(len(power)) * dk
    ok = counts > 0
    return k[ok], power[ok] / counts[ok]


def dominant_wavelength(field, hx, hy=None):
    """Wavelength of the radial spectrum peak, excluding the mean."""
    k, power = radial_spectrum(field, hx, hy)
    i = 1 + int(np.argmax(power[1:]))
    # parabolic refinement of the peak bin
    if 1 < i < len(k) - 1:
        a, b, c = np.log(power[i - 1:i + 2] + 1e-300)
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den < 0 else 0.0
        kpk = k[i] + shift * (k[i + 1] - k[i])
    else:
        kpk = k[i]
    return 1.0 / kpk


def orientation(field, hx, hy=None, sigma=2.0):
    """Local stripe direction from the smoothed structure tensor.

    Returns ``(theta, coherence)``: ``theta`` is the angle of the direction
    along which the field varies least (along the stripes), in radians in
    ``(-pi/2, pi/2]``, measured from the x axis.
    """
    hy = hx if hy is None else hy
    f = np.asarray(field, dtype=float)
    gy, gx = np.gradient(f, hy, hx)
    Jxx = ndimage.gaussian_filter(gx * gx, sigma)
    Jxy = ndimage.gaussian_filter(gx * gy, sigma)
    Jyy = ndimage.gaussian_filter(gy * gy, sigma)
    # dominant gradient direction; stripes run perpendicular to it
    phi = 0.5 * np.arctan2(2 * Jxy, Jxx - Jyy)
    theta = phi + np.pi / 2
    theta = np.where(theta > np.pi / 2, theta - np.pi, theta)
    tr = Jxx + Jyy
    coh = np.sqrt((Jxx - Jyy) ** 2 + 4 * Jxy ** 2) / np.where(tr > 0, tr, 1.0)
    return theta, coh


def angle_to(theta, direction):
    """Unsigned angle between line directions ``theta`` and a vector, in [0, pi/2]."""
    ref = np.arctan2(direction[1], direction[0])
    d = np.abs(np.asarray(theta) - ref) % np.pi
    return np.minimum(d, np.pi - d)
