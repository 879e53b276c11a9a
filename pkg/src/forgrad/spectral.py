"""2D Fourier analysis: spectra, radial signatures, slopes, low-pass filtering.

Conventions: unnormalized forward DFT (inverse carries the 1/(HW) factor),
centered views put DC at (H//2, W//2), frequency radius is measured in
cycles/image from that center.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import AlreadyCentered, EmptyInput, InsufficientBins, NegativeSigma, NotCentered


@dataclass(frozen=True)
class Spectrum2D:
    coeffs: np.ndarray  # complex (H, W)
    centered: bool

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class FourierSignature:
    radii: np.ndarray  # integer radii 0..R_max, cycles/image
    amplitude: np.ndarray  # mean |coefficient| per radius
    n_images: int


@dataclass(frozen=True)
class PowerSlope:
    slope: float  # decades of amplitude per cycle/image
    intercept: float
    r_squared: float


def dft2(map2d) -> Spectrum2D:
    x = np.asarray(map2d, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D map, got shape {x.shape}")
    return Spectrum2D(np.fft.fft2(x), centered=False)


def idft2(spec: Spectrum2D) -> np.ndarray:
    c = spec.coeffs
    if spec.centered:
        c = np.fft.ifftshift(c)
    return np.fft.ifft2(c)


def fftshift(spec: Spectrum2D) -> Spectrum2D:
    if spec.centered:
        raise AlreadyCentered("spectrum is already centered")
    return Spectrum2D(np.fft.fftshift(spec.coeffs), centered=True)


def ifftshift(spec: Spectrum2D) -> Spectrum2D:
    if not spec.centered:
        raise NotCentered("spectrum is not centered")
    return Spectrum2D(np.fft.ifftshift(spec.coeffs), centered=False)


def _radius_grid(h: int, w: int) -> np.ndarray:
    """Distance of each centered-spectrum bin from the DC position."""
    u = np.arange(h) - h // 2
    v = np.arange(w) - w // 2
    return np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)


def radial_signature(maps) -> FourierSignature:
    """Mean spectral amplitude per integer frequency radius, averaged over maps.

    Bins are assigned by rounding the distance from the centered DC position;
    radii beyond floor(min(W,H)/2) are discarded.
    """
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if len(maps) == 0:
        raise EmptyInput("need at least one map")
    h, w = maps[0].shape
    for m in maps:
        if m.shape != (h, w):
            raise ValueError("all maps must share one shape")
    r_max = min(h, w) // 2
    rbin = np.rint(_radius_grid(h, w)).astype(int)
    keep = rbin <= r_max
    flat_bins = rbin[keep]
    counts = np.bincount(flat_bins, minlength=r_max + 1)
    total = np.zeros(r_max + 1)
    for m in maps:
        amp = np.abs(np.fft.fftshift(np.fft.fft2(m)))
        total += np.bincount(flat_bins, weights=amp[keep], minlength=r_max + 1)
    amplitude = total / (counts * len(maps))
    return FourierSignature(radii=np.arange(r_max + 1), amplitude=amplitude,
                            n_images=len(maps))


def power_slope(sig: FourierSignature) -> PowerSlope:
    """Least-squares fit of log10(amplitude) vs radius, DC excluded, zero bins skipped."""
    mask = (sig.radii >= 1) & (sig.amplitude > 0)
    r = sig.radii[mask].astype(np.float64)
    a = np.log10(sig.amplitude[mask])
    if r.size < 3:
        raise InsufficientBins(f"need >= 3 nonzero bins beyond DC, got {r.size}")
    slope, intercept = np.polyfit(r, a, 1)
    resid = a - (slope * r + intercept)
    ss_tot = np.sum((a - a.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return PowerSlope(slope=float(slope), intercept=float(intercept),
                      r_squared=float(min(max(r2, 0.0), 1.0)))


def lowpass(map2d, sigma: float) -> np.ndarray:
    """Ideal circular low-pass filter with pass-band diameter sigma (cycles/image).

    sigma >= min(H, W) bypasses the filter entirely (the unfiltered anchor);
    otherwise the centered spectrum is multiplied by a hard mask keeping
    radius <= sigma/2 and inverse-transformed back to a real map.
    """
    x = np.asarray(map2d, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D map, got shape {x.shape}")
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    h, w = x.shape
    if sigma >= min(h, w):
        return x.copy()
    mask = _radius_grid(h, w) <= sigma / 2.0
    spec = np.fft.fftshift(np.fft.fft2(x)) * mask
    out = np.fft.ifft2(np.fft.ifftshift(spec))
    resid = np.max(np.abs(out.imag)) if out.size else 0.0
    if resid >= 1e-9 * max(1.0, np.max(np.abs(out.real))):
        raise AssertionError(f"imaginary residual {resid} exceeds tolerance")
    return np.ascontiguousarray(out.real)


def lowpass_nchw(x, sigma: float) -> np.ndarray:
    """Apply lowpass per channel of a (C,H,W) or (B,C,H,W) array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    if x.ndim == 3:
        for c in range(x.shape[0]):
            out[c] = lowpass(x[c], sigma)
    elif x.ndim == 4:
        for b in range(x.shape[0]):
            for c in range(x.shape[1]):
                out[b, c] = lowpass(x[b, c], sigma)
    else:
        raise ValueError(f"expected (C,H,W) or (B,C,H,W), got shape {x.shape}")
    return out


def signature_to_csv(sig: FourierSignature, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["radius", "amplitude", "n_images"])
        for r, a in zip(sig.radii, sig.amplitude):
            wr.writerow([int(r), repr(float(a)), sig.n_images])


def slope_to_json(slope: PowerSlope, n_images: int, shape, path):
    record = {"slope": slope.slope, "intercept": slope.intercept,
              "r_squared": slope.r_squared, "n_images": n_images,
              "shape": list(shape)}
    with open(path, "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
