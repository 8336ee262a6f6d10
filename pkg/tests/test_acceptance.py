"""The nine primary acceptance criteria, each at its stated tolerance and runtime bound."""
import math
import time

import numpy as np

from s4dm.cli import main
from s4dm.fileio import write_f32r
from s4dm.gridmath import RandomStream
from s4dm.inference import TileScheme, despeckle
from s4dm.metrics import enl, mse_psnr, sample_skew_kurt
from s4dm.network import ArchSpec, backward, forward_train, init_params
from s4dm.speckle import SpeckleConfig, apply_speckle, log_gamma_moments, make_synthetic_targets
from s4dm.training import delta, delta_var, loss, loss_grad
from s4dm.transform import fit_lambda, lyj_forward, lyj_inverse, residual_objective


def test_criterion_1_lyj_roundtrip(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    u = rng.uniform(-5, 5, 10**4)
    lam = rng.uniform(-2, 4, 10**4)
    back = np.array([lyj_inverse(lyj_forward(a, l), l) for a, l in zip(u, lam)])
    worst = float(np.max(np.abs(back - u) / np.maximum(1.0, np.abs(u))))
    grid_pos, grid_neg = np.linspace(0, 5, 101), np.linspace(-5, 0, 101)
    cont0 = float(np.max(np.abs(lyj_forward(grid_pos, 1e-8) - lyj_forward(grid_pos, 0.0))))
    cont2 = float(np.max(np.abs(lyj_forward(grid_neg, 2 - 1e-8) - lyj_forward(grid_neg, 2.0))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and cont0 <= 1e-6 and cont2 <= 1e-6 and dt < 1.0
    record(1, "LYJ roundtrip", ok,
           f"max scaled error {worst:.2e}, continuity at 0 {cont0:.1e} / at 2 {cont2:.1e}, {dt:.2f} s")


def test_criterion_2_log_gamma_moments(record):
    t0 = time.perf_counter()
    parts, ok = [], True
    for i, looks in enumerate((1.0, 2.0, 4.0)):
        x = np.log(RandomStream(2, i).gamma(looks, 1.0 / looks, 10**7))
        skew, kurt = sample_skew_kurt(x)
        m = log_gamma_moments(looks)
        ok &= abs(x.var() / m.variance - 1) <= 0.005
        ok &= abs(skew - m.skewness) <= 0.02 and abs(kurt - m.excess_kurtosis) <= 0.05
        if looks == 1.0:
            ok &= abs(m.variance - math.pi ** 2 / 6) <= 1e-12
            ok &= abs(m.skewness + 1.14) <= 0.02 and abs(m.excess_kurtosis - 2.4) <= 0.05
        parts.append(f"L={looks:g}: var {x.var():.4f}/{m.variance:.4f} skew {skew:.3f}/{m.skewness:.3f} "
                     f"exkurt {kurt:.3f}/{m.excess_kurtosis:.3f}")
    dt = time.perf_counter() - t0
    record(2, "log-Gamma oracle", bool(ok) and dt < 30, "; ".join(parts) + f"; {dt:.1f} s")


def test_criterion_3_gaussianization(record):
    t0 = time.perf_counter()
    spec, obj = fit_lambda(1.0, 0.0, RandomStream(3), n=10**6, return_objective=True)
    base = residual_objective(1.0, 1.0, 0.0, RandomStream(3), 10**6)  # same draws as the fit
    other = fit_lambda(1.0, 0.0, RandomStream(4), n=10**6)
    dt = time.perf_counter() - t0
    reduction = 1 - abs(obj.skewness) / abs(base.skewness)
    spread = abs(spec.lambda_dagger - other.lambda_dagger)
    ok = reduction >= 0.8 and obj.value < base.value and spread <= 0.05 and dt < 60
    record(3, "Gaussianization", ok,
           f"lambda {spec.lambda_dagger:.4f}, |skew| reduced {100 * reduction:.1f}%, "
           f"J {obj.value:.2e} < J(1) {base.value:.3f}, seed spread {spread:.4f}, {dt:.1f} s")


def test_criterion_4_gradients(record):
    t0 = time.perf_counter()
    arch = ArchSpec()
    params = init_params(arch, 4)
    rng = np.random.default_rng(4)
    # move off the identity initialization so every layer carries gradient
    for k in params:
        if k.startswith("out.") or k.endswith(".bias"):
            params[k] = rng.normal(size=params[k].shape) * 0.05
    z_data = rng.normal(size=(2, 1, 12, 12))
    sigma_t = np.array([1.3, 2.4])
    z_t = z_data + np.sqrt(sigma_t ** 2 - 1.0)[:, None, None, None] * rng.normal(size=z_data.shape)
    d = delta(sigma_t, 1.0)
    w = 1.0 / np.maximum(d, 0.05) ** 2

    def total(p):
        return loss(forward_train(p, z_t, sigma_t)[0], z_t, z_data, d, w)

    z_hat, cache = forward_train(params, z_t, sigma_t)
    grads = backward(params, cache, loss_grad(z_hat, z_t, z_data, d, w))
    names = sorted(params)
    errs, eps = [], 1e-5
    for _ in range(60):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        orig = params[name][idx]
        params[name][idx] = orig + eps
        fp = total(params)
        params[name][idx] = orig - eps
        fm = total(params)
        params[name][idx] = orig
        fd = (fp - fm) / (2 * eps)
        errs.append(abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), 1e-8))
    dt = time.perf_counter() - t0
    worst = max(errs)
    record(4, "gradient correctness", worst <= 1e-4 and dt < 60,
           f"{len(errs)} coordinates, max relative error {worst:.2e}, {dt:.1f} s")


def test_criterion_5_end_to_end(record, desk_run):
    r = desk_run
    t0 = time.perf_counter()
    out = despeckle(r.noisy, r.state.params, r.cfg.arch, r.spec)
    enl_in, enl_out = enl(r.noisy).mean_enl, enl(out).mean_enl
    peak = float(r.clean.max())
    psnr_in, psnr_out = mse_psnr(r.noisy, r.clean, peak)[1], mse_psnr(out, r.clean, peak)[1]
    dt = r.seconds + time.perf_counter() - t0
    ok = enl_out >= 10 * enl_in and psnr_out - psnr_in >= 3 and dt < 600
    record(5, "end-to-end despeckling", ok,
           f"ENL {enl_in:.2f} -> {enl_out:.1f} ({enl_out / enl_in:.1f}x), "
           f"PSNR {psnr_in:.2f} -> {psnr_out:.2f} dB (+{psnr_out - psnr_in:.2f}), "
           f"{r.state.step} iterations, {dt:.0f} s")


def test_criterion_6_blend_algebra(record):
    rng = np.random.default_rng(6)
    parts, ok = [], True
    for sd in (1.0, 0.37, 4.49):
        ok &= delta(sd, sd, 0.0) == 0.0
        ok &= delta_var(2 * sd * sd, sd * sd, 0.0) == 0.5
    z_t, z_data = rng.normal(size=(2, 1, 8, 8)), rng.normal(size=(2, 1, 8, 8))
    worst = 0.0
    for d in (0.05, 0.5, 0.93):
        z_hat = (z_data - (1 - d) * z_t) / d
        worst = max(worst, loss(z_hat, z_t, z_data, d))
    ok &= worst <= 1e-12
    sigma_form = abs(delta(math.sqrt(2) * 1.0, 1.0, 0.0) - 0.5)
    parts.append("delta(sd, sd, 0) = 0 and delta at sigma_t^2 = 2 sd^2 is exactly 0.5")
    parts.append(f"sqrt(2)*sd input off by {sigma_form:.1e} (rounding of sqrt 2)")
    parts.append(f"exact-fit loss max {worst:.1e}")
    record(6, "blend / delta algebra", bool(ok), ", ".join(parts))


def test_criterion_7_enl_metric(record):
    img = apply_speckle(np.full((256, 256), 100.0), SpeckleConfig(4.0, 7))
    full = enl(img, 32, n_rois=64)
    default = enl(img)
    half = apply_speckle(np.full((128, 128), 100.0), SpeckleConfig(4.0, 8))
    half[:, 64:] *= np.exp(1.5 * np.random.default_rng(8).normal(size=(128, 64)))
    rois_ok = all(c + s <= 64 for _, c, s in enl(half).rois)
    scaled = enl(3.7 * img)
    scale_ok = scaled.rois == default.rois and np.allclose(scaled.per_roi_enl, default.per_roi_enl, rtol=1e-12)
    again = enl(img)
    bit_ok = again.rois == default.rois and np.array(again.per_roi_enl).tobytes() == \
        np.array(default.per_roi_enl).tobytes()
    ok = abs(full.mean_enl - 4.0) <= 0.15 and rois_ok and scale_ok and bit_ok
    record(7, "ENL metric", ok,
           f"all 64 patches {full.mean_enl:.3f} (4 lowest-variance ROIs {default.mean_enl:.3f}), "
           f"constant-half ROIs {rois_ok}, scale invariant {scale_ok}, repeatable {bit_ok}")


def test_criterion_8_tiled_consistency(record, desk_run):
    r = desk_run
    clean = make_synthetic_targets("piecewise-constant", 160, seed=50).image
    x = apply_speckle(clean, SpeckleConfig(4.0, 51))
    whole = despeckle(x, r.state.params, r.cfg.arch, r.spec)
    scheme = TileScheme.for_arch(r.cfg.arch, 64)
    tiled = despeckle(x, r.state.params, r.cfg.arch, r.spec, scheme)
    h = scheme.halo
    diff = float(np.max(np.abs(tiled[h:-h, h:-h] - whole[h:-h, h:-h])))
    record(8, "tiled inference", diff <= 1e-6, f"160x160, tile 64, halo {h}, max interior difference {diff:.1e}")


def _run_pipeline(root, tag):
    """Every CLI subcommand with --threads 1 and fixed seeds; returns the produced files' bytes by name."""
    d = root / tag
    d.mkdir()
    for s in range(2):
        write_f32r(d / f"clean{s}.f32r", make_synthetic_targets("piecewise-constant", 64, seed=s).image)
    (d / "cfg.txt").write_text("iterations = 15\nlog_every = 5\nbatch = 4\n")
    steps = [
        ["simulate", "--clean", d / "clean0.f32r", "--looks", "4", "--seed", "1", "--out", d / "n0.f32r",
         "--pgm", d / "n0.pgm"],
        ["simulate", "--clean", d / "clean1.f32r", "--looks", "4", "--seed", "2", "--out", d / "n1.f32r"],
        ["fit-transform", "--looks", "4", "--data", d / "m.txt", "--seed", "3", "--out", d / "t.txt"],
        ["train", "--data", d / "m.txt", "--transform", d / "t.txt", "--config", d / "cfg.txt", "--seed", "4",
         "--out", d / "model.ckpt", "--log", d / "train.log"],
        ["despeckle", "--in", d / "n1.f32r", "--model", d / "model.ckpt", "--transform", d / "t.txt",
         "--out", d / "o_whole.f32r", "--pgm", d / "o_whole.pgm"],
        ["despeckle", "--in", d / "n1.f32r", "--model", d / "model.ckpt", "--transform", d / "t.txt",
         "--tile", "32", "--out", d / "o_tiled.f32r"],
        ["evaluate", "--in", d / "o_whole.f32r", "--ref", d / "clean1.f32r", "--format", "kv"],
    ]
    (d / "m.txt").write_text("n0.f32r\nn1.f32r\n")
    for argv in steps:
        code = main(["--threads", "1"] + [str(a) for a in argv])
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    files = {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name not in ("cfg.txt", "m.txt")}
    return files


def test_criterion_9_determinism(record, tmp_path, capsys):
    a = _run_pipeline(tmp_path, "a")
    out_a = capsys.readouterr().out
    b = _run_pipeline(tmp_path, "b")
    out_b = capsys.readouterr().out
    differing = sorted(k for k in a if a[k] != b.get(k))
    # train prints only loss values; evaluate prints metrics: both must match too
    ok = not differing and a.keys() == b.keys() and out_a == out_b
    record(9, "determinism", ok,
           f"{len(a)} output files byte-identical across two runs, stdout identical {out_a == out_b}"
           + (f", differing: {differing}" if differing else ""))
