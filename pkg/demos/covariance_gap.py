"""Exact covariance gap of the one-dimensional Boolean model.

Prints ``max |Sigma_n - Sigma|`` from the closed-form finite-n covariance and
the fitted log-log slope, which sits near ``-1``.

    python demos/covariance_gap.py [R]
"""

import sys

from steinbound.boolean import exact_covariance_1d
from steinbound.covariance import covariance_gap_report, gap_exponent, sigma_exact_1d


def main(R: float = 0.3) -> None:
    lim = sigma_exact_1d(R)
    ns = [2 ** e for e in range(6, 15)]
    gaps = [covariance_gap_report(exact_covariance_1d(n, R), lim).max_gap for n in ns]
    print(f"limit Sigma at R={R}:\n{lim}")
    for n, g in zip(ns, gaps):
        print(f"n={n:>6}  gap={g:.3e}")
    fit = gap_exponent(ns, gaps)
    print(f"slope {fit.slope:.4f} +- {fit.half_width:.4f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.3)
