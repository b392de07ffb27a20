"""Independent symbolic evaluation of the moment contraction constants.

Builds theta_p from its two ingredients (the Burkholder-type constant and
the two Hoelder-split time integrals) with sympy, evaluates at rational
inputs, and takes the p -> 2+ limit symbolically. Used as the oracle for
the library's closed forms.
"""

import argparse
import json

import sympy as sp


def theta_p_symbolic():
    p, N, nu, L = sp.symbols("p N nu L", positive=True)
    s = sp.symbols("s", positive=True)
    c_p = (p * (p - 1) / 2 * (p / (p - 1)) ** (p - 2)) ** (p / 2)
    # int_0^inf e^{-nu p s / (2(p-1))} ds and int_0^inf e^{-nu p s/(p-2)} ds
    drift_int = sp.integrate(sp.exp(-nu * p * s / (2 * (p - 1))), (s, 0, sp.oo), conds="none")
    noise_int = sp.integrate(sp.exp(-nu * p * s / (p - 2)), (s, 0, sp.oo), conds="none")
    outer = sp.integrate(sp.exp(-nu * p * s / 2), (s, 0, sp.oo), conds="none")
    theta = 2 ** (p - 1) * N**p * L**p * (drift_int ** (p - 1) + c_p * noise_int ** (p / 2 - 1)) * outer
    return (p, N, nu, L), sp.simplify(theta), c_p


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", default="1")
    ap.add_argument("--nu", default="5")
    ap.add_argument("--L", default="2/3")
    ap.add_argument("--p", default="3")
    a = ap.parse_args()
    (p, N, nu, L), theta, c_p = theta_p_symbolic()
    vals = {N: sp.Rational(a.N), nu: sp.Rational(a.nu), L: sp.Rational(a.L)}
    theta_at = theta.subs(vals)
    pv = sp.Rational(a.p)
    limit = sp.limit(theta_at, p, 2, dir="+")
    theta2 = vals[N] ** 2 * vals[L] ** 2 * (2 + vals[nu]) / vals[nu] ** 2
    print(json.dumps({
        "theta_p": float(theta_at.subs(p, pv)),
        "c_p": float(c_p.subs(p, pv)),
        "theta_p_limit": str(sp.nsimplify(limit)),
        "theta_p_limit_value": float(limit),
        "theta2": str(theta2),
    }, indent=1))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
