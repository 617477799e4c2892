"""Reference implementations used only by the tests.

They share no code with the package: softmax is evaluated in 50-digit
arithmetic, ranks by O(n^2) counting and Pearson correlation over exact
fractions.
"""

from __future__ import annotations

from fractions import Fraction

from mpmath import mp, mpf

mp.dps = 50


def softmax_hp(*logits: float) -> list[float]:
    values = [mpf(x) for x in logits]
    exps = [mp.exp(v) for v in values]
    total = sum(exps)
    return [float(e / total) for e in exps]


def tti_score_hp(pos: float, neu: float, neg: float, w1: float = 1.0, w2: float = 0.5) -> float:
    values = [mpf(pos), mpf(neu), mpf(neg)]
    exps = [mp.exp(v) for v in values]
    total = sum(exps)
    return float((mpf(w1) * exps[0] + mpf(w2) * exps[1]) / total)


def logistic_hp(diff: float) -> float:
    return float(1 / (1 + mp.exp(-mpf(diff))))


def brute_ranks(values: list[float]) -> list[Fraction]:
    ranks = []
    for v in values:
        below = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        # tied block occupies ranks below+1 .. below+equal
        ranks.append(Fraction(2 * below + equal + 1, 2))
    return ranks


def exact_pearson(xs, ys) -> float | None:
    a = [Fraction(x) for x in xs]
    b = [Fraction(y) for y in ys]
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    if saa == 0 or sbb == 0:
        return None
    num = mpf(sab.numerator) / sab.denominator
    den = mp.sqrt((mpf(saa.numerator) / saa.denominator) * (mpf(sbb.numerator) / sbb.denominator))
    return float(num / den)


def brute_srcc(xs, ys) -> float | None:
    return exact_pearson(brute_ranks(list(xs)), brute_ranks(list(ys)))
