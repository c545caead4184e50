"""Brute-force information measures by explicit summation over outcomes.

Deliberately independent of mvinfo's array code: a joint distribution is a
dict from outcome tuples to probabilities, and every quantity is a loop.
"""

import math


def joint_dict(probs, enc1=None, enc2=None):
    """Outcomes (v1, v2, t, z1, z2) of a nested-list table with optional encodings."""
    out = {}
    for a, plane in enumerate(probs):
        for b, row in enumerate(plane):
            for t, p in enumerate(row):
                if p > 0:
                    z1 = enc1[a] if enc1 is not None else a
                    z2 = enc2[b] if enc2 is not None else b
                    out[(a, b, t, z1, z2)] = out.get((a, b, t, z1, z2), 0.0) + p
    return out


NAMES = {"v1": 0, "v2": 1, "t": 2, "z1": 3, "z2": 4}


def H(joint, *names):
    idx = [NAMES[n] for n in names]
    marg = {}
    for outcome, p in joint.items():
        key = tuple(outcome[i] for i in idx)
        marg[key] = marg.get(key, 0.0) + p
    total = 0.0
    for p in marg.values():
        if p > 0:
            total -= p * math.log(p)
    return total


def I(joint, a, b, given=None):
    if given is None:
        return H(joint, a) + H(joint, b) - H(joint, a, b)
    return H(joint, a, given) + H(joint, b, given) - H(joint, a, b, given) - H(joint, given)


def II(joint, a, b, c):
    """McGill interaction information I(a,b) - I(a,b|c)."""
    return I(joint, a, b) - I(joint, a, b, c)


def bayes_error(pzt):
    """1 - sum_z max_t p(z, t) by scanning every cell."""
    err = 1.0
    for row in pzt:
        best = 0.0
        for p in row:
            if p > best:
                best = p
        err -= best
    return err


def nested(table):
    return table.probs.tolist()
