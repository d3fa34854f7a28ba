"""Reference p-values for the one-sided signed-rank test.

Writes tests/oracles/wilcoxon_cases.hpp. Cases without tied |differences|
use scipy's exact distribution, small tied cases a full 2^n enumeration of
sign assignments, and cases above 25 non-zero pairs scipy's normal
approximation with tie and continuity correction.
"""

import itertools
import pathlib

import numpy as np
from scipy import stats
from scipy.stats import rankdata


def enumerate_p(d):
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    n = len(d)
    total = 0
    hits = 0
    # Vectorised over blocks of sign patterns.
    idx = np.arange(1 << n, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)
    w = bits @ ranks
    hits = np.count_nonzero(w >= w_obs - 1e-9)
    total = len(w)
    return hits / total


def reference(a, b):
    d = np.asarray(a) - np.asarray(b)
    nz = d[d != 0]
    n = len(nz)
    tied = len(np.unique(np.abs(nz))) != n
    if n > 25:
        r = stats.wilcoxon(a, b, alternative="greater", zero_method="wilcox", correction=True,
                           method="asymptotic")
        return float(r.pvalue), "asymptotic"
    if not tied and not np.any(d == 0):
        r = stats.wilcoxon(a, b, alternative="greater", method="exact")
        return float(r.pvalue), "scipy-exact"
    assert n <= 20, "tied small cases must stay enumerable"
    return enumerate_p(d), "enumeration"


def cases():
    rng = np.random.default_rng(20240611)
    out = []
    # Continuous values: no ties, no zeros.
    for n, shift in [(5, 0.3), (8, 0.1), (10, 0.5), (12, 0.2), (15, -0.1), (20, 0.15), (25, 0.05)]:
        a = rng.uniform(0, 1, n)
        b = a - shift + rng.normal(0, 0.3, n)
        out.append((a, b))
    # Quantised values: ties and zero differences.
    for n, shift in [(6, 1), (10, 1), (12, 0), (14, 2), (16, 1), (18, -1), (20, 1)]:
        a = rng.integers(0, 6, n).astype(float)
        b = a - shift + rng.integers(-2, 3, n)
        out.append((a / 5.0, b / 5.0))
    # Large samples for the normal approximation, with and without ties.
    for n, shift, quant in [(30, 0.05, False), (40, 0.0, False), (60, 0.1, True), (100, 0.02, True),
                            (150, 0.03, False), (300, 0.01, True)]:
        a = rng.uniform(0, 1, n)
        b = a - shift + rng.normal(0, 0.2, n)
        if quant:
            a = np.round(a * 10) / 10
            b = np.round(b * 10) / 10
        out.append((a, b))
    return out


def fmt(v):
    return "{" + ", ".join(repr(float(x)) for x in v) + "}"


def main():
    lines = [
        "// Generated by tests/oracles/wilcoxon_oracle.py; do not edit.",
        "#pragma once",
        "",
        "#include <vector>",
        "",
        "struct WilcoxonCase {",
        "  std::vector<double> a, b;",
        "  double p_value;",
        "  const char* method;",
        "};",
        "",
        "inline const std::vector<WilcoxonCase>& wilcoxon_cases() {",
        "  static const std::vector<WilcoxonCase> cases = {",
    ]
    for a, b in cases():
        p, method = reference(a, b)
        lines.append(f"      {{{fmt(a)},\n       {fmt(b)},\n       {p!r}, \"{method}\"}},")
    lines += ["  };", "  return cases;", "}", ""]
    path = pathlib.Path(__file__).with_name("wilcoxon_cases.hpp")
    path.write_text("\n".join(lines))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
