"""Benchmark the compiled tile kernels against the numpy fallback.

Usage: python benchmarks/bench_rasterizer.py [--n 5000] [--size 256]
"""

import argparse
import time

import numpy as np

from splatedit.raster import kernels, render, render_backward
from splatedit.scene import GaussianScene, look_at
from splatedit.scene.gaussians import logit
from splatedit.scene.sh import color_to_dc


def build_scene(n, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianScene(
        positions=rng.normal(0, 0.8, (n, 3)),
        log_scales=rng.normal(np.log(0.04), 0.4, (n, 3)),
        rotations=rng.normal(0, 1, (n, 4)),
        opacities=logit(rng.uniform(0.2, 0.95, n)),
        sh=color_to_dc(rng.uniform(0.1, 0.9, (n, 3)))[:, None, :],
        sh_degree=0)


def time_backend(scene, cam, backend, repeats):
    render(scene, cam, backend=backend)  # warmup
    fw = []
    bw = []
    out = None
    rng = np.random.default_rng(1)
    d_color = rng.normal(0, 1, (cam.height, cam.width, 3))
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = render(scene, cam, backend=backend)
        fw.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        grads = render_backward(scene, cam, out, d_color)
        bw.append(time.perf_counter() - t0)
    return min(fw), min(bw), out, grads


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    scene = build_scene(args.n)
    cam = look_at([0, 0, -4], [0, 0, 0], width=args.size, height=args.size)
    names = ["python"] + (["compiled"] if kernels.compiled_available() else [])
    print(f"scene: {args.n} gaussians, image {args.size}x{args.size}")
    results = {}
    for name in names:
        fw, bw, out, grads = time_backend(scene, cam, name, args.repeats)
        results[name] = (fw, bw, out, grads)
        print(f"{name:>9}: forward {fw * 1e3:8.1f} ms   backward {bw * 1e3:8.1f} ms")
    if len(results) == 2:
        fw_p, bw_p, out_p, g_p = results["python"]
        fw_c, bw_c, out_c, g_c = results["compiled"]
        print(f"{'speedup':>9}: forward {fw_p / fw_c:7.1f} x    backward {bw_p / bw_c:7.1f} x")
        cdiff = np.abs(out_p.color - out_c.color).max()
        gdiff = max(np.abs(g_p[k] - g_c[k]).max() for k in
                    ("positions", "log_scales", "rotations", "opacities", "sh"))
        print(f"agreement: color {cdiff:.2e}, gradients {gdiff:.2e}")


if __name__ == "__main__":
    main()
