"""Independent reference values frozen into tests/test_frozen.cpp.

Uses only scipy quadrature / root finding and textbook definitions, not the
closed forms used in the library.
"""
import numpy as np
from scipy.integrate import dblquad, quad
from scipy.optimize import brentq

hbar = 1.054571817e-34
h = 2 * np.pi * hbar
c = 299792458.0
e = 1.602176634e-19
eps0 = 8.8541878128e-12
amu = 1.66053906660e-27
debye = 1e-21 / c
m_ca = (39.962590863 - 5.48579909065e-4) * amu


def patch(x0, x1, z0, z1, p):
    px, py, pz = p
    f = lambda z, x: py / (2 * np.pi * ((px - x) ** 2 + py ** 2 + (pz - z) ** 2) ** 1.5)
    return dblquad(f, x0, x1, z0, z1, epsabs=0, epsrel=1e-12)[0]


print("# patch_potential (rectangle x0 x1 z0 z1, point) -> value")
for rect, pt in [
    ((-1e-4, 2e-4, -3e-4, 5e-4), (5e-5, 1e-4, 2e-5)),
    ((1.3e-4, 5.4e-4, -3e-3, 3e-3), (-4e-5, 2.4e-4, 0.0)),
    ((0.0, 1e-3, 0.0, 4e-4), (1.7e-3, 3e-4, -6e-4)),
]:
    print(rect, pt, repr(patch(*rect, pt)))


def s_mu(n_a, mu, gmin, gmax, f):
    w = 2 * np.pi * f
    g = lambda lg: n_a / np.exp(lg) * 2 * mu ** 2 * np.exp(lg) / (np.exp(2 * lg) + w ** 2) * np.exp(lg)
    lo, hi = np.log(gmin), np.log(gmax)
    cuts = sorted({lo, hi, *[x for x in (np.log(w) - 8, np.log(w) - 2, np.log(w), np.log(w) + 2, np.log(w) + 8) if lo < x < hi]})
    return sum(quad(g, a, b, epsabs=0, epsrel=1e-13, limit=200)[0] for a, b in zip(cuts[:-1], cuts[1:]))


A = np.log(1e10 / 1e-2)
print("# wide band A", repr(A))
for f in (1e3, 1e6):
    print("# S_mu quadrature f =", f, repr(s_mu(A, debye, 1e-2, 1e10, f)))

d = 240e-6
ns = 6e19


def plane(n_s, mu, a_norm, d, f, gmin, gmax):
    smu = s_mu(a_norm, mu, gmin, gmax, f)
    g = lambda rho: n_s * (1 / (2 * np.pi * eps0 * (rho ** 2 + d ** 2) ** 1.5)) ** 2 * 2 * np.pi * rho
    integral = quad(g, 0, np.inf, epsabs=0, epsrel=1e-13, limit=400)[0]
    return integral * smu


print("# printed plane closed form wide band, 240 um, 1 MHz", repr(A * ns * debye ** 2 / (8 * np.pi * eps0 ** 2 * d ** 4 * 1e6)))
print("# surface integral wide band, 240 um, 1 MHz", repr(plane(ns, debye, A, d, 1e6, 1e-2, 1e10)))

# hand unit conversion: phonons/s at 1 MHz -> S_E
for rate in (5e3, 5e4):
    w = 2 * np.pi * 1e6
    s_e = 4 * m_ca * hbar * w * rate / e ** 2
    print("# S_E from", rate, "phonons/s:", repr(s_e), " omega*S_E:", repr(w * s_e))

print("# effective frequency (1.2, 1.4, 0.4) MHz:", repr(1 / (1 / 1.2e6 + 1 / 1.4e6 + 1 / 0.4e6)))
print("# delta = n_s / n_v:", repr(6e19 / 5e27))

# Doppler recooling, two-level, phase average by direct quadrature.
G = 2 * np.pi * 22.4e6
lam = 396.96e-9
k = 2 * np.pi / lam
Isat = np.pi * h * c * G / (3 * lam ** 3)
s = 380.0 / Isat
delta = -2 * np.pi * 5e6
p = 1 / np.sqrt(3)
Erec = (hbar * k) ** 2 / (2 * m_ca)
print("# I_sat W/m^2", repr(Isat), " s", repr(s))


def rate(v):
    x = 2 * (delta - k * p * v) / G
    return 0.5 * G * s / (1 + s + x * x)


def averages(E):
    vm = np.sqrt(2 * E / m_ca)
    R = quad(lambda ph: rate(vm * np.sin(ph)), 0, 2 * np.pi, epsabs=0, epsrel=1e-13, limit=400)[0] / (2 * np.pi)
    vR = quad(lambda ph: vm * np.sin(ph) * rate(vm * np.sin(ph)), 0, 2 * np.pi, epsabs=0, epsrel=1e-13, limit=400)[0] / (2 * np.pi)
    return R, vR


def dEdt(E):
    R, vR = averages(E)
    return hbar * k * p * vR + Erec * (p * p + 1 / 3) * R


for E in (1e-25, 1.602176634e-22, 1.602176634e-21):
    R, vR = averages(E)
    print("# E", E, "<R>", repr(R), "dE/dt", repr(dEdt(E)))
Ed = np.exp(brentq(lambda u: dEdt(np.exp(u)), np.log(1e-28), np.log(1e-23), xtol=1e-14, rtol=1e-14))
print("# E_D", repr(Ed))
