"""Regenerates formula_oracles.json with 50-digit mpmath arithmetic.

Run from this directory: python3 gen_oracles.py
Values are written with 17 significant digits.
"""

import json

import mpmath as mp

mp.mp.dps = 50


def q(x):
    return mp.erfc(x / mp.sqrt(2)) / 2


def q_inv(p):
    lo, hi = mp.mpf(-40), mp.mpf(40)
    for _ in range(200):
        mid = (lo + hi) / 2
        if q(mid) > p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def disp(s):
    return (1 - 1 / (1 + s) ** 2) / mp.log(2) ** 2


def fbl(s, c, eps):
    return c * mp.log(1 + s, 2) - q_inv(eps) * mp.sqrt(c * disp(s)) + mp.log(c, 2)


def bler(s, c, l):
    return q(mp.sqrt(c / disp(s)) * (mp.log(1 + s, 2) - l / c))


def amp(theta, bmin, alpha, phi):
    return (1 - bmin) * ((mp.sin(theta - phi) + 1) / 2) ** alpha + bmin


def pathloss(d, pl0, nu):
    return mp.power(10, (pl0 - 10 * nu * mp.log10(d)) / 10)


def steering(x, y, n1, n2, ratio):
    out = []
    for a in range(n1):
        for b in range(n2):
            g = 2 * mp.pi * ratio * (a * mp.cos(x) + b * mp.sin(x)) * mp.sin(y)
            out.append([f(mp.cos(g)), f(mp.sin(g))])
    return out


def f(v):
    return float(mp.nstr(v, 17))


def main():
    mpf = mp.mpf
    pi = mp.pi
    data = {}

    ps = [mpf(10) ** (-e) for e in range(1, 16)]
    ps += [mpf("1e-20"), mpf("1e-50"), mpf("1e-100"), mpf("1e-200")]
    ps += [mpf(v) for v in ["0.05", "0.2", "0.3", "0.45", "0.5", "0.55", "0.7", "0.9", "0.99", "0.999999"]]
    ps += [mpf(k) / 64 for k in range(1, 64, 3)]
    data["q_inv"] = [[f(p), f(q_inv(p))] for p in ps]

    xs = [mpf(k) / 4 for k in range(-32, 33)] + [mpf(v) for v in [9, 10, 12, 15, 20, 25, 30, 37]]
    data["q_func"] = [[f(x), f(q(x))] for x in xs]

    sinrs = [mpf(0)] + [mpf(10) ** (mpf(k) / 4) for k in range(-24, 13)]
    data["dispersion"] = [[f(s), f(disp(s))] for s in sinrs]

    fbl_pts = []
    for s in [mpf("1e-3"), mpf("0.01"), mpf("0.1"), mpf("0.5"), 1, 2, 5, 10, 31.6, 100]:
        for c in [1, 10, 25, 100, 1000]:
            for eps in [mpf("1e-8"), mpf("1e-5"), mpf("1e-3"), mpf("0.1"), mpf("0.49")]:
                if (c + int(mp.floor(s * 7)) + int(-mp.log10(eps))) % 3 == 0:
                    fbl_pts.append([f(mpf(s)), c, f(eps), f(fbl(mpf(s), c, eps))])
    fbl_pts.append([1.0, 100, 1e-5, f(fbl(mpf(1), 100, mpf("1e-5")))])
    data["fbl_bits"] = fbl_pts

    bler_pts = []
    for s in [mpf("0.05"), mpf("0.3"), 1, 3, 10]:
        for c in [10, 50, 100, 400]:
            cap = c * mp.log(1 + s, 2)
            for frac in [mpf("0.5"), mpf("0.8"), mpf("0.95"), mpf(1), mpf("1.05")]:
                l = cap * frac
                bler_pts.append([f(s), c, f(l), f(bler(s, c, l))])
    data["bler"] = bler_pts

    amp_pts = []
    for (bmin, alpha, phi) in [(mpf("0.4"), mpf("1.9"), mpf("0.43") * pi), (mpf("0.2"), mpf("1.9"), mpf("0.43") * pi),
                               (mpf("0.0"), mpf("3.0"), mpf("0.1") * pi)]:
        for k in range(-20, 21):
            th = pi * k / 20
            amp_pts.append([f(th), f(bmin), f(alpha), f(phi), f(amp(th, bmin, alpha, phi))])
    data["amplitude"] = amp_pts

    data["pathloss"] = [[f(mpf(d)), -30.0, f(mpf(nu)), f(pathloss(mpf(d), mpf(-30), mpf(nu)))]
                        for d in [1, 2, "3.5", 10, 16, 40, "47.9", 100, 250, 1000]
                        for nu in ["2.0", "2.2", "3.5"]]

    st = []
    for (x, y, n1, n2, r) in [(0, pi / 2, 2, 1, "0.5"), (mpf("0.3"), mpf("0.7"), 4, 4, "0.5"),
                              (mpf("-1.2"), mpf("-0.27"), 2, 4, "0.5"), (mpf("2.5"), mpf("1.1"), 3, 2, "0.25"),
                              (mpf("0.9"), mpf("0.0"), 2, 2, "0.5")]:
        st.append({"azimuth": f(mpf(x)), "elevation": f(mpf(y)), "n1": n1, "n2": n2,
                   "spacing_ratio": f(mpf(r)), "entries": steering(mpf(x), mpf(y), n1, n2, mpf(r))})
    data["steering"] = st

    with open("formula_oracles.json", "w") as fh:
        json.dump(data, fh, indent=1)


if __name__ == "__main__":
    main()
