"""Smoke test for the `prden` extension module.

Build it first:  pip install --no-build-isolation ./crates/python
Then run:        python python/smoke_test.py
"""

import os
import tempfile

import numpy as np

import prden


def conv3x3(x, w, b):
    """Cross-correlation, zero padding 1. x: [in, s, s], w: [out, in, 3, 3]."""
    _, s, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.empty((w.shape[0], s, s))
    for o in range(w.shape[0]):
        acc = np.full((s, s), b[o])
        for ky in range(3):
            for kx in range(3):
                acc += np.tensordot(w[o, :, ky, kx], xp[:, ky : ky + s, kx : kx + s], axes=1)
        out[o] = acc
    return out


def reference_forward(path, z):
    n, _, mean, scale, tensors = prden.read_weights(path)
    t = {k: np.asarray(data, dtype=np.float32).astype(np.float64).reshape(dims) for k, (dims, data) in tensors.items()}
    side = int(round(np.sqrt(n)))
    mean = np.asarray(mean, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    u = ((z.reshape(2, n) - mean[:, None]) / scale[:, None]).reshape(2, side, side)
    a = conv3x3(u, t["head.w"], t["head.b"])
    for i in range(4):
        h = np.maximum(conv3x3(a, t[f"block{i}.conv0.w"], t[f"block{i}.conv0.b"]), 0)
        a = a + np.maximum(conv3x3(h, t[f"block{i}.conv1.w"], t[f"block{i}.conv1.b"]), 0)
    tail = conv3x3(a, t["tail.w"], t["tail.b"]).reshape(2, n)
    return z + (scale[:, None] * tail).reshape(-1)


def check_denoiser(tmp):
    path = os.path.join(tmp, "w.prdw")
    prden.write_random_weights(path, 16, sigma=0.5, seed=3, gain=0.5)
    den = prden.Denoiser.load(path)
    assert den.n_antennas == 16 and den.sigma == 0.5
    z = np.random.default_rng(0).standard_normal(32)
    got = np.asarray(den.forward(z.tolist()))
    want = reference_forward(path, z)
    err = np.max(np.abs(got - want))
    assert err < 1e-10, err
    print(f"denoiser forward matches numpy reference: max |diff| = {err:.2e}")


def check_solver():
    rng = np.random.default_rng(1)
    m, n = 24, 16
    a = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
    h = np.zeros(n, complex)
    h[[2, 9]] = [1.0 + 0.5j, -0.7j]
    y = a @ h + 0.01 * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    op = prden.MeasurementOperator(a.real.tolist(), a.imag.tolist())
    ar = np.asarray(op.real_form())
    y_real = np.concatenate([y.real, y.imag])
    h_real = np.concatenate([h.real, h.imag])
    assert np.allclose(op.apply(h_real.tolist()), ar @ h_real)

    inst = prden.ProblemInstance(op, y_real.tolist(), lam=0.02, sigma=1.0)
    assert abs(inst.lambda_max() - np.max(np.abs(ar.T @ y_real))) < 1e-12
    res = prden.solve(inst)
    assert res.converged, res.iterations
    x_fista, _ = prden.fista(inst, max_iter=20000, tol=1e-13)
    gap = abs(inst.objective(res.estimate) - inst.objective(x_fista))
    assert gap < 1e-8, gap

    eta = np.asarray(prden.eta_sequence(inst, 20))
    eta_raw = np.asarray(prden.eta_sequence(inst, 20, raw=True))
    assert np.max(np.abs(eta - eta_raw)) < 1e-10

    ls = prden.ls_estimate(prden.ProblemInstance(op, y_real.tolist(), lam=0.0))
    assert np.allclose(ls, np.linalg.lstsq(ar, y_real, rcond=None)[0], atol=1e-10)
    st = prden.soft_threshold([3.0, 0.5, 4.0, 0.0], 1.0)
    # shrinks each real coordinate
    assert np.allclose(st, [2.0, 0.0, 3.0, 0.0])
    print(f"pr converged in {res.iterations} iterations, nmse {prden.nmse_db(h_real.tolist(), res.estimate):.2f} dB")


def check_dataset(tmp):
    ds = prden.Dataset.generate(8, snr_db=10.0, seed=5)
    path = os.path.join(tmp, "d.prdn")
    ds.write(path)
    back = prden.Dataset.read(path)
    assert len(back) == 8 and back.n_antennas == 64 and back.m == 128
    h, y, snr, _ = back.sample(3)
    assert h == ds.sample(3)[0] and snr == 10.0
    ls = np.mean(back.estimate("ls"))
    pr = np.mean(back.estimate("pr"))
    print(f"dataset: ls {ls:.2f} dB, pr {pr:.2f} dB")
    try:
        prden.Dataset.generate(2, n_antennas=48)
    except ValueError as e:
        assert "geometry.n_antennas" in str(e)
    else:
        raise AssertionError("48 antennas accepted")


def check_selftest():
    suites = prden.selftest(iters=20)
    for name, defect, tol, ok in suites:
        assert ok, (name, defect, tol)
    print(f"selftest: {len(suites)} suites passed")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        check_denoiser(tmp)
        check_solver()
        check_dataset(tmp)
        check_selftest()
    print("ok")
