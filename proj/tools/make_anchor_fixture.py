"""Writes tests/data/anchor_grams.json: a centered Gram pair whose CKA is
0.9985 and whose victim-anchored epsilon is 0.0777, both to about 1e-13.

The suspect features are F + t*N for a fixed noise draw N; t is bisected
until CKA hits the target, then the suspect Gram is rescaled (CKA is scale
free) so that ||K - s*K'||_F / ||K||_F hits the epsilon target.
"""

import json
import pathlib

import numpy as np

TARGET_CKA = 0.9985
TARGET_EPS = 0.0777
M, D = 12, 18


def centered_gram(f):
    c = f - f.mean(axis=0)
    return c @ c.T


def cka(k, l):
    return float((k * l).sum() / (np.linalg.norm(k) * np.linalg.norm(l)))


def main():
    rng = np.random.default_rng(20240601)
    features = np.abs(rng.standard_normal((M, D)))
    noise = rng.standard_normal((M, D))
    k = centered_gram(features)

    lo, hi = 0.0, 1.0
    while cka(k, centered_gram(features + hi * noise)) > TARGET_CKA:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cka(k, centered_gram(features + mid * noise)) > TARGET_CKA:
            lo = mid
        else:
            hi = mid
    g = centered_gram(features + 0.5 * (lo + hi) * noise)

    # ||K - s G||^2 = eps^2 ||K||^2, larger root.
    kk, kg, gg = (k * k).sum(), (k * g).sum(), (g * g).sum()
    a, b, c = gg, -2.0 * kg, kk * (1.0 - TARGET_EPS**2)
    s = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    suspect = s * g

    eps = np.linalg.norm(k - suspect) / np.linalg.norm(k)
    print(f"cka {cka(k, suspect):.15f} eps {eps:.15f}")

    out = {
        "cka": TARGET_CKA,
        "epsilon": TARGET_EPS,
        "victim": [[float(x) for x in row] for row in k],
        "suspect": [[float(x) for x in row] for row in suspect],
    }
    path = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data" / "anchor_grams.json"
    path.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
