"""Self-supervised training on speckled scenes only, then one-pass despeckling.

No clean image is used for training; the clean held-out target only scores the result.

Run:  python3 demos/03_train_and_despeckle.py [iterations]   (default 400, about a minute)
"""
import sys
import time

import numpy as np

from s4dm import (RandomStream, SpeckleConfig, TrainConfig, apply_speckle, despeckle, enl, fit_lambda,
                  make_synthetic_targets, mse_psnr, to_z_domain, train)
from s4dm.inference import TileScheme


def main():
    iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 400
    looks = 4.0
    scenes = [make_synthetic_targets("piecewise-constant", 64, seed=s).image for s in range(17)]
    noisy = [apply_speckle(c, SpeckleConfig(looks, 100 + s)) for s, c in enumerate(scenes)]
    train_set, (held_clean, held_noisy) = noisy[:16], (scenes[16], noisy[16])

    anchor = float(np.mean([np.log(x).mean() for x in train_set]))
    spec = fit_lambda(looks, anchor, RandomStream(0))
    print(f"transform: lambda {spec.lambda_dagger:.3f}, sigma_data {spec.sigma_data:.3f}")

    cfg = TrainConfig(sigma_data=spec.sigma_data, iterations=iterations)

    def progress(state):
        if state.step % 100 == 0:
            print(f"  step {state.step}: running loss {state.running_loss:.3f}")

    t0 = time.perf_counter()
    state = train([to_z_domain(x, spec) for x in train_set], cfg, callback=progress)
    print(f"trained {state.step} steps in {time.perf_counter() - t0:.0f} s")

    out = despeckle(held_noisy, state.params, cfg.arch, spec)
    peak = float(held_clean.max())
    print(f"held-out ENL:  {enl(held_noisy).mean_enl:.2f} -> {enl(out).mean_enl:.2f}")
    print(f"held-out PSNR: {mse_psnr(held_noisy, held_clean, peak)[1]:.2f} -> {mse_psnr(out, held_clean, peak)[1]:.2f} dB")

    # tiled inference keeps only tile cores, so it matches the whole-image pass
    tiled = despeckle(held_noisy, state.params, cfg.arch, spec, TileScheme.for_arch(cfg.arch, 32))
    print(f"tiled vs whole-image max difference: {np.abs(tiled - out).max():.2e}")


if __name__ == "__main__":
    main()
