"""Physical constants (CODATA, via scipy) and unit helpers.

Everything inside the package is SI with angular frequencies. Ordinary
frequencies (Hz) only appear at the I/O boundary.
"""
import math

from scipy import constants as _c

HBAR = _c.hbar
K_B = _c.k
C_LIGHT = _c.c

TWO_PI = 2.0 * math.pi


def hz_to_rad(f):
    return TWO_PI * f


def rad_to_hz(w):
    return w / TWO_PI
