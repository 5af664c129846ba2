"""Smoke test for the Python extension.

Builds the extension with cargo (unless SREDGENET_SO points at a built
library), imports it and exercises images, metrics, resampling, Canny and
the networks.
"""
import importlib.util
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    so = os.environ.get("SREDGENET_SO")
    if so is None:
        subprocess.run(["cargo", "build", "-q", "-p", "sredgenet-py"], cwd=ROOT, check=True)
        so = ROOT / "target" / "debug" / "libsredgenet_py.so"
    tmp = Path(tempfile.mkdtemp())
    dst = tmp / "sredgenet.so"
    shutil.copy(so, dst)
    spec = importlib.util.spec_from_file_location("sredgenet", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod, tmp


def to_image(sg, arr):
    arr = np.asarray(arr, dtype=np.float32)
    c, h, w = arr.shape
    return sg.Image(c, h, w, arr.ravel().tolist())


def to_array(img):
    return np.array(img.data(), dtype=np.float32).reshape(img.shape)


def luma(a):
    return 16.0 + 65.481 * a[0] + 128.553 * a[1] + 24.966 * a[2]


def main():
    sg, tmp = load_module()
    rng = np.random.default_rng(0)

    a = rng.random((3, 32, 40), dtype=np.float32)
    b = np.clip(a + rng.uniform(-0.05, 0.05, a.shape).astype(np.float32), 0, 1)
    ia, ib = to_image(sg, a), to_image(sg, b)
    assert ia.shape == (3, 32, 40)
    assert np.array_equal(to_array(ia), a)

    ya, yb = luma(a.astype(np.float64)), luma(b.astype(np.float64))
    d = (ya - yb)[2:-2, 2:-2]
    want = 10 * np.log10(255.0**2 / np.mean(d * d))
    got = sg.psnr(ia, ib, 2)
    assert abs(got - want) < 1e-6, (got, want)
    s = sg.ssim(ia, ib)
    assert 0.0 < s < 1.0 and abs(sg.ssim(ia, ia) - 1.0) < 1e-12
    print(f"psnr {got:.4f} dB (numpy {want:.4f}), ssim {s:.4f}")

    flat = to_image(sg, np.full((3, 17, 13), 0.375))
    up = sg.bicubic_resize(flat, 34, 26)
    assert up.shape == (3, 34, 26) and np.allclose(to_array(up), 0.375, atol=1e-6)
    lr, hr = sg.degrade(to_image(sg, rng.random((3, 35, 42))), 2)
    assert hr.shape == (3, 32, 40) and lr.shape == (3, 16, 20)
    assert sg.offset_fix(hr) == hr

    path = tmp / "a.png"
    ia.save(str(path))
    back = sg.Image.load(str(path))
    assert np.abs(to_array(back) - a).max() <= 0.5 / 255 + 1e-6

    yy, xx = np.mgrid[0:48, 0:48]
    disc = ((yy - 23.5) ** 2 + (xx - 24.2) ** 2 < 14.0**2).astype(np.float32)
    e = to_array(sg.canny(to_image(sg, disc[None]), 1.4, 0.1, 0.2))[0]
    assert set(np.unique(e)) <= {0.0, 1.0} and e.sum() > 0
    try:
        from skimage.feature import canny as sk_canny

        ref = sk_canny(disc.astype(np.float64), sigma=1.4, low_threshold=0.1, high_threshold=0.2, use_quantiles=False)
        near = 0
        pts = np.argwhere(e == 1)
        for y, x in pts:
            near += ref[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2].any()
        print(f"canny: {int(e.sum())} edge pixels, {near / len(pts):.3f} within 1px of scikit-image")
    except ImportError:
        print(f"canny: {int(e.sum())} edge pixels")

    net = sg.SrNet(scale=2, n_resblocks=2, n_feats=8)
    params = net.init(1)
    assert params.num_scalars() == net.param_count() and len(params.names()) == len(params)
    out = net.upscale(params, lr)
    assert out.shape == (3, 32, 40)
    merge = sg.MergeNet(edge_skip=True, n_resblocks=1, n_feats=8)
    edge = sg.canny(out)
    fused = merge.merge(merge.init(2), out, edge)
    assert fused.shape == out.shape
    print(f"sr net {net.param_count()} params, merge net {merge.param_count()} params")

    try:
        sg.Pipeline.load(str(tmp / "none.ckpt"), str(tmp / "none.txt"), str(tmp / "none.ckpt"), 2)
    except (IOError, ValueError) as err:
        print(f"missing checkpoint raises {type(err).__name__}")
    else:
        raise AssertionError("loading a missing checkpoint succeeded")
    try:
        sg.Image(3, 2, 2, [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("bad buffer length accepted")

    shutil.rmtree(tmp)
    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
