"""Compare the compiled convolution kernels against the numpy fallback.

Times the six kernel entry points at representative shapes, plus one full
training iteration (forward + backward) of a small model under each backend.

Usage:
    python benchmarks/bench_kernels.py [--repeats N] [--full]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from modernn.kernels import available_backends, get_backend

SHAPES = [
    # (batch, cin, h, w, cout) roughly: training cell, tiny cell, eval frame
    (8, 32, 4, 4, 32),
    (8, 17, 4, 4, 16),
    (8, 16, 16, 16, 16),
    (1, 128, 16, 16, 64),
]


def _time(fn, *args, repeats: int) -> float:
    fn(*args)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e6


def bench_kernels(repeats: int) -> None:
    backends = {name: get_backend(name) for name in available_backends()}
    rng = np.random.default_rng(0)
    names = list(backends)
    print(f"backends: {', '.join(names)}  (best of {repeats}, microseconds)")
    for b, cin, h, w, cout in SHAPES:
        x = rng.standard_normal((b, cin, h, w))
        k = rng.standard_normal((cout, cin, 3, 3))
        bias = rng.standard_normal(cout)
        gy = rng.standard_normal((b, cout, h, w))
        kd = rng.standard_normal((cin, 1, 3, 3))
        gyd = rng.standard_normal((b, cin, h, w))
        cases = [
            ("conv2d_fwd", lambda be: be.conv2d_fwd(x, k, bias)),
            ("conv2d_bwd_input", lambda be: be.conv2d_bwd_input(gy, k)),
            ("conv2d_bwd_kernel", lambda be: be.conv2d_bwd_kernel(gy, x, 3, 3)),
            ("dwconv2d_fwd", lambda be: be.dwconv2d_fwd(x, kd)),
            ("dwconv2d_bwd_input", lambda be: be.dwconv2d_bwd_input(gyd, kd)),
            ("dwconv2d_bwd_kernel", lambda be: be.dwconv2d_bwd_kernel(gyd, x, 3, 3)),
        ]
        print(f"\nx={x.shape} k={k.shape}")
        for label, call in cases:
            times = {n: _time(call, be, repeats=repeats)
                     for n, be in backends.items()}
            cols = "  ".join(f"{n} {t:9.1f}us" for n, t in times.items())
            if "cython" in times and "python" in times:
                cols += f"  speedup {times['python'] / times['cython']:.2f}x"
            print(f"  {label:<20} {cols}")


def bench_train_iter(repeats: int) -> None:
    import os

    results = {}
    for name in available_backends():
        os.environ["MODERNN_KERNELS"] = name
        # subprocess keeps backend selection clean (it is fixed at import)
        import subprocess
        import sys
        code = (
            "import numpy as np, time\n"
            "from modernn.network import ModeRNNConfig, FramePredictor, forward_sequence\n"
            "from modernn import engine as E\n"
            "cfg = ModeRNNConfig(layers=1, channels=16, patch=4, input_len=5,\n"
            "                    pred_len=5, image_size=16, num_slots=4, ffn_hidden=8)\n"
            "m = FramePredictor(cfg, np.random.default_rng(0))\n"
            "seq = np.random.default_rng(1).random((8, 10, 1, 16, 16))\n"
            "def it():\n"
            "    r = forward_sequence(m, seq, np.random.default_rng(2), False)\n"
            "    E.backward(r.loss); m.zero_grad()\n"
            "it()\n"
            f"n = {repeats}\n"
            "t0 = time.perf_counter()\n"
            "for _ in range(n): it()\n"
            "print((time.perf_counter() - t0) / n)\n"
        )
        out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, env=os.environ.copy())
        if out.returncode != 0:
            raise RuntimeError(out.stderr)
        results[name] = float(out.stdout.strip().splitlines()[-1])
    os.environ.pop("MODERNN_KERNELS", None)
    print("\nfull train iteration (1-layer 16ch model, batch 8, 16x16, 10 frames):")
    for name, t in results.items():
        print(f"  {name:<8} {t * 1e3:8.1f} ms/iter")
    if "cython" in results and "python" in results:
        print(f"  speedup {results['python'] / results['cython']:.2f}x")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--full", action="store_true",
                    help="also time a full training iteration per backend")
    args = ap.parse_args()
    bench_kernels(args.repeats)
    if args.full:
        bench_train_iter(max(3, args.repeats // 10))


if __name__ == "__main__":
    main()
