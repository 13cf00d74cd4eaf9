"""Second, independently written evaluation of the theorem constants.

Works in 50-digit arithmetic and obtains R from the right side of the
synchronization differential inequality, ``R = rhs / (4 K |Omega|)``,
instead of the bracket form used by the package.
"""

import mpmath as mp

mp.mp.dps = 50


def reference_ledger(P, m, omega, eta1, eta2):
    a, b, alpha, beta, q, r, c, J, d = (mp.mpf(getattr(P, k)) for k in
                                        ("a", "b", "alpha", "beta", "q", "r", "c", "J", "d"))
    omega, eta1, eta2 = mp.mpf(omega), mp.mpf(eta1), mp.mpf(eta2)
    one = mp.mpf(1)
    C1 = (beta * beta + 4) / b
    C2 = (2 * C1 ** 4 * a ** 4 + 2 * C1 * J * J + 2 * (2 * C1 ** 2 + C1 ** 2 / r + C1) ** 2
          + 4 * alpha * alpha + 2 * (q * c) ** 2 / r + 2 * (q * q / r) ** 2)
    rs = min(one, r) / 2
    K = 8 * beta * beta / b
    lead = (1 + m) * (C2 + C1 * C1 / 32)
    M = lead / rs
    lo = min(C1, one)
    Q = M * omega / lo + 1
    keq = 4 * lead / (rs * lo) * omega * (eta2 * d * K * omega + K * K + K * a * a / b
                                          + (q - K) ** 2 / (2 * r))
    R = keq / (4 * K * omega)
    mu = min(2 * eta1 * d, one, r)
    return {"C1": C1, "C2": C2, "rStar": rs, "K": K, "M": M, "Q": Q, "R": R, "mu": mu}


def max_relative_gap(constants, ref):
    gap = mp.mpf(0)
    for k, v in ref.items():
        got = mp.mpf(getattr(constants, k))
        gap = max(gap, abs(got - v) / abs(v))
    return float(gap)


def random_parameters(rng):
    from hrsync.model import Parameters
    pos = lambda: float(10 ** rng.uniform(-2, 2))
    P = Parameters(a=pos(), b=pos(), alpha=pos(), beta=pos(), q=pos(), r=pos(),
                   c=float(rng.uniform(-5, 5)), J=pos(), d=pos(), p=pos())
    m = int(rng.integers(0, 5))
    omega = float(10 ** rng.uniform(-1, 1))
    eta1 = float(10 ** rng.uniform(-1, 2))
    return P, m, omega, eta1, eta1 / omega
