"""Closed-form costs at 50 digits, used to difference the cost numerically.

Double-precision central differences cannot resolve derivatives that are
small residues of large terms; these transcriptions can.
"""
import mpmath as mp

DPS = 50


def _mpf(*vals):
    return [mp.mpf(v) for v in vals]


def cost_bm(mu, sigma, c, fee, rho, x, t):
    with mp.workdps(DPS):
        mu, sigma, c, fee, rho, x, t = _mpf(mu, sigma, c, fee, rho, x, t)
        st = sigma * mp.sqrt(t)
        a = (x + mu * t) / st
        b = (-x + mu * t) / st
        e = mp.exp(-2 * x * mu / sigma ** 2)
        return ((mp.ncdf(-a) + e * mp.ncdf(b)) * (-x - c * rho) + mu * t * mp.ncdf(a)
                + e * (2 * x - mu * t) * mp.ncdf(b) + fee)


def cost_gbm(mu, sigma, s0, c, fee, rho, y, t):
    with mp.workdps(DPS):
        mu, sigma, s0, c, fee, rho, y, t = _mpf(mu, sigma, s0, c, fee, rho, y, t)
        st = sigma * mp.sqrt(t)
        am, ap = mu - sigma ** 2 / 2, mu + sigma ** 2 / 2
        e = mp.exp(-2 * y * mu / sigma ** 2)
        prob = mp.ncdf((-y - am * t) / st) + e * mp.exp(y) * mp.ncdf((-y + am * t) / st)
        q = (mp.exp(mu * t) * mp.ncdf((y + ap * t) / st)
             - e * mp.exp(mu * t - y) * mp.ncdf((-y + ap * t) / st))
        return (s0 * mp.exp(-y) - c * rho) * prob + s0 * q + fee - s0


def central_diff(f, x, order=1, h=None):
    """Central difference of f at x in 50-digit arithmetic."""
    with mp.workdps(DPS):
        x = mp.mpf(x)
        h = mp.mpf(h) if h is not None else mp.mpf(10) ** -12 * max(abs(x), mp.mpf(1))
        if order == 1:
            return (f(x + h) - f(x - h)) / (2 * h)
        if order == 2:
            return (f(x + h) - 2 * f(x) + f(x - h)) / h ** 2
        raise ValueError("order must be 1 or 2")
