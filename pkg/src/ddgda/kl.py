from __future__ import annotations

import math


def kl_normal(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)).

    Computed as the negative cross-entropy minus the negative entropy:

        E_q[log q] = -0.5 log(2 pi) - 0.5 (log sigma1^2 + 1)
        E_q[log p] = -0.5 log(2 pi) - 0.5 log sigma2^2
                     - 0.5 (sigma1^2 + (mu1 - mu2)^2) / sigma2^2

    With ``sigma1 == sigma2 == s`` this is exactly ``(mu1 - mu2)^2 / (2 s^2)``.
    """
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError(f"standard deviations must be positive, got {sigma1!r}, {sigma2!r}")
    if sigma1 == sigma2:
        d = mu1 - mu2
        return d * d / (2.0 * sigma1 * sigma1)
    v1, v2 = sigma1 * sigma1, sigma2 * sigma2
    neg_entropy = -0.5 * (math.log(v1) + 1.0)
    cross = -0.5 * math.log(v2) - 0.5 * (v1 + (mu1 - mu2) ** 2) / v2
    return neg_entropy - cross
