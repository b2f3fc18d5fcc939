"""Side-by-side timing of the numba and numpy kernel backends.

Run:  python3 benchmarks/bench_kernels.py [--repeats N] [--episodes E]

Each kernel is warmed up once per backend (JIT compilation happens there),
then timed over the median of N repeats on identical inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mprl import get_kernels


def _spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


def build_inputs(rng, episodes, horizon=100, segments=25, dof=2, basis=5):
    m = dof * (basis + 1)
    q = 2 * dof
    return {
        "tracking_rollout": dict(
            pos0=rng.normal(size=dof), vel0=rng.normal(size=dof),
            target_pos=np.ascontiguousarray(rng.normal(size=(horizon, dof))),
            target_vel=np.ascontiguousarray(rng.normal(size=(horizon, dof))),
            kp=100.0, kd=20.0, a_max=10.0, dt=0.02),
        "gae_batch": dict(
            rewards=rng.normal(size=(episodes, horizon)),
            values=rng.normal(size=(episodes, horizon + 1)),
            gamma=0.99, lam=0.95),
        "segment_gauss_forward": dict(
            hmat=rng.normal(size=(segments, m, q)),
            mu=rng.normal(size=(episodes, m)),
            cov=np.stack([_spd(rng, m) for _ in range(episodes)]),
            base_mean=rng.normal(size=(episodes, segments, q)),
            observed=rng.normal(size=(episodes, segments, q)),
            noise_var=1e-4),
        "segment_gauss_vjp": dict(
            hmat=rng.normal(size=(segments, m, q)),
            g_mean_seg=rng.normal(size=(episodes, segments, q)),
            g_cov_seg=np.ascontiguousarray(
                rng.normal(size=(episodes, segments, q, q)))),
    }


def run(repeats: int, episodes: int) -> None:
    rng = np.random.default_rng(0)
    inputs = build_inputs(rng, episodes)
    backends = {name: get_kernels(name) for name in ("numba", "numpy")}
    print(f"{'kernel':<24}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for fn_name, kwargs in inputs.items():
        medians = {}
        for backend, mod in backends.items():
            fn = getattr(mod, fn_name)
            fn(**kwargs)  # warmup / JIT
            samples = []
            for _ in range(repeats):
                start = time.perf_counter()
                fn(**kwargs)
                samples.append(time.perf_counter() - start)
            medians[backend] = float(np.median(samples))
        ratio = medians["numpy"] / medians["numba"]
        print(f"{fn_name:<24}{medians['numba'] * 1e3:>10.3f}ms"
              f"{medians['numpy'] * 1e3:>10.3f}ms{ratio:>9.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--episodes", type=int, default=64)
    args = parser.parse_args()
    run(args.repeats, args.episodes)


if __name__ == "__main__":
    main()
