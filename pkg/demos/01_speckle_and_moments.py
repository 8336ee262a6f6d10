"""Speckle simulation and why the log domain is not yet Gaussian.

Run:  python3 demos/01_speckle_and_moments.py
"""
import numpy as np

from s4dm import SpeckleConfig, apply_speckle, log_gamma_moments, make_synthetic_targets
from s4dm.metrics import sample_skew_kurt


def main():
    clean = make_synthetic_targets("piecewise-constant", 256, seed=0).image
    print(f"clean scene: {clean.shape}, levels {clean.min():.1f} .. {clean.max():.1f}")

    for looks in (1.0, 4.0, 16.0):
        noisy = apply_speckle(clean, SpeckleConfig(looks, seed=1))
        ratio = noisy / clean
        print(f"\nL = {looks:g}: noisy / clean has mean {ratio.mean():.3f} and variance {ratio.var():.3f}"
              f" (expected 1 and {1 / looks:.3f})")

        # taking logs turns multiplicative speckle additive, but its distribution stays skewed
        log_nu = np.log(ratio).ravel()
        skew, kurt = sample_skew_kurt(log_nu)
        m = log_gamma_moments(looks)
        print(f"  log speckle, sample:   mean {log_nu.mean():+.4f}  var {log_nu.var():.4f}"
              f"  skew {skew:+.3f}  excess kurtosis {kurt:+.3f}")
        print(f"  log speckle, analytic: mean {m.mean:+.4f}  var {m.variance:.4f}"
              f"  skew {m.skewness:+.3f}  excess kurtosis {m.excess_kurtosis:+.3f}")

    print("\nFewer looks means stronger non-Gaussianity, which the Yeo-Johnson step (demo 02) removes.")


if __name__ == "__main__":
    main()
