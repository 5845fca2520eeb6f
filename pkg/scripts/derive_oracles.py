"""Recompute the frozen reference values used in the test suite.

Everything here goes through mpmath at 50 digits (or exact rational
arithmetic) and never imports gsgdlab, so the numbers are an independent
check on the package. Run: python3 scripts/derive_oracles.py
"""

from fractions import Fraction

import mpmath as mp

mp.mp.dps = 50


def show(name, value):
    print(f"{name:42s} {mp.nstr(value, 17)}")


def main():
    show("erf(1)", mp.erf(1))
    show("logistic(2)", 1 / (1 + mp.e ** -2))
    p = mp.mpf("0.9")
    show("binary_entropy(0.9)", -(p * mp.log(p) + (1 - p) * mp.log(1 - p)))
    # E max(Z1^2, Z2^2) = 1 + E|Z1^2 - Z2^2| / 2 = 1 + 2/pi
    show("Delta_2 (sigma_y = 1)", 1 + 2 / mp.pi)
    show("p(1/(2 sqrt 2))", 1 - mp.mpf("0.72") * (1 - mp.e ** (-mp.mpf(1) / 2)))
    nu16 = mp.sqrt(mp.pi / 2 * mp.log(16 / (4 * mp.log(16))))
    show("nu(16)", nu16)
    show("rho bound eps=0 delta=1 R=16", nu16**2 * (1 - mp.mpf(1) / 16))
    # GSGD RHS at D0=1, rho=1.5, eta=0.1, L=2, K=100, Delta=1.5, exact rationals
    D0, rho, eta, L, K, Delta = 1, Fraction(3, 2), Fraction(1, 10), 2, 100, Fraction(3, 2)
    c = 1 - eta * L
    rhs = Fraction(D0**2) / (2 * rho * eta * c * K) + Delta / (rho * c)
    print(f"{'gsgd rhs example (exact)':42s} {rhs} = {float(rhs)!r}")
    cross = Fraction(25) * Fraction(1, 5) / (2 * Fraction(1, 20) * (Fraction(16366, 10000) - Fraction(6, 5)))
    print(f"{'crossover example':42s} floor({float(cross)!r})")
    for beta in ("0.5", "0.8"):
        b = mp.mpf(beta)
        # direct evaluation of the erfc integral in mpmath
        quad = 1 - mp.quad(lambda y: mp.e ** (-y * y / 4) * mp.erfc(b * y / (2 * mp.sqrt(1 - b * b))), [0, mp.inf]) / (
            2 * mp.sqrt(mp.pi)
        )
        show(f"p_j quadrature beta={beta}", quad)
        show(f"p_j orthant beta={beta}", mp.mpf(1) / 2 + mp.asin(b) / mp.pi)
    for tau in ("0.01", "0.1"):
        t = mp.mpf(tau)
        b = 1 - t
        bound = 1 - mp.sqrt((2 - 2 * b * b) / (2 - b * b))
        show(f"cor 6.3 ratio tau={tau}", (1 - bound) / mp.sqrt(t))
    for sigma in ("0.01", "0.05", "0.1", "0.2"):
        s = mp.mpf(sigma)
        h = lambda t: 2 * (1 - mp.e ** (-t)) / (2 + t * t / (s * s))  # noqa: E731
        # stationary point: e^{-t} (2 + t^2/s^2) = (1 - e^{-t}) 2t/s^2
        dh = lambda t: mp.e ** (-t) * (2 + t * t / (s * s)) - (1 - mp.e ** (-t)) * 2 * t / (s * s)  # noqa: E731
        t_star = mp.findroot(dh, (mp.sqrt(2) * s * mp.mpf("0.5"), mp.sqrt(2) * s * mp.mpf("1.2")), solver="anderson")
        show(f"lemma h max sigma={sigma}", h(t_star))
        show(f"lemma t* sigma={sigma}", t_star)


if __name__ == "__main__":
    main()
