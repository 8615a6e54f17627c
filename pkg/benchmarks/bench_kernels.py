"""Compare the compiled and NumPy kernel backends.

Times each kernel on a packed batch shaped like point-mass training, then a
full iw-SFT loss and gradient with each backend swapped in.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from iwsft import diffnum, kernels, objectives
from iwsft.envs import PointMassEnv, generate_pointmass_data
from iwsft.objectives import WeightConfig


def kernel_cases(rng, rows=3200, segs=64):
    logits = rng.normal(size=(rows, 8))
    acts = rng.integers(0, 8, size=rows)
    mean = rng.normal(size=(rows, 2))
    ls = rng.normal(size=2) * 0.1
    a = rng.normal(size=(rows, 2))
    v = rng.normal(size=rows)
    off = np.linspace(0, rows, segs + 1).astype(np.int64)
    k = np.full(segs, 0.02)
    return {
        "categorical_logp": lambda b: b.categorical_logp(logits, acts),
        "gaussian_logp": lambda b: b.gaussian_logp(mean, ls, a),
        "segment_sum": lambda b: b.segment_sum(v, off),
        "trajectory_weights": lambda b: b.trajectory_weights(v, off, k, -0.5, 0.5, 0.0, 1e6),
    }


def swap_backend(backend):
    for name in ("categorical_logp", "gaussian_logp", "segment_sum", "trajectory_weights"):
        setattr(kernels, name, getattr(backend, name))


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the NumPy backend only")

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {b: best_of(lambda: fn(mod), args.repeat) for b, mod in backends.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<22}" + "".join(f"{t * 1e6:>10.1f}us" for t in times.values()) + f"{speed:>9.2f}x")

    env = PointMassEnv()
    ds = generate_pointmass_data(64, 0.3, seed=0)
    batch = diffnum.pack(list(ds))
    lay = env.layout(hidden=(64, 64))
    theta, q, ref = (diffnum.init_params(lay, s) for s in range(3))
    cfgs = {"temperature": WeightConfig(), "per_step_clip": WeightConfig(scheme="per_step_clip")}
    original = {n: getattr(kernels, n) for n in ("categorical_logp", "gaussian_logp", "segment_sum", "trajectory_weights")}
    print("\niw-SFT loss+grad, batch of 64 trajectories x 50 steps, hidden (64, 64)")
    try:
        for cname, cfg in cfgs.items():
            times = {}
            for b, mod in backends.items():
                swap_backend(mod)
                times[b] = best_of(lambda: objectives.iw_sft_loss(batch, theta, q, ref, cfg), args.repeat)
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{cname:<22}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values()) + f"{speed:>9.2f}x")
    finally:
        for n, f in original.items():
            setattr(kernels, n, f)


if __name__ == "__main__":
    main()
