"""Compare the compiled and pure-Python sequence log-likelihood kernels.

    python benchmarks/bench_kernels.py --nodes 200 --draws 100 --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from netchoice import kernels
from netchoice.rc import SimulatedLikelihood
from netchoice.rng import Stream
from netchoice.synthetic import RC_SPEC, RC_TRUTH, generate_network


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=200)
    ap.add_argument("--draws", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    data = generate_network(args.nodes, RC_SPEC, RC_TRUTH, stream=Stream(0))
    sim = SimulatedLikelihood(data, RC_SPEC, args.draws, seed=1, threads=args.threads)
    x = RC_TRUTH.pack()
    print(f"{len(data)} sequences, {data.n_situations} situations, "
          f"{data.arrays.X.shape[0]} alternative rows, R = {args.draws}")
    results = {}
    initial = kernels.BACKEND
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        f = sim.loglik(x, want_scores=True)[0]
        results[backend] = (best_of(lambda: sim.loglik(x, want_scores=True), args.repeat), f)
    kernels.set_backend(initial)
    base = results.get("python", (None,))[0]
    print(f"{'backend':>8}  {'seconds':>9}  {'speed-up':>8}  log-likelihood")
    for name, (sec, f) in results.items():
        speed = f"{base / sec:8.1f}" if base else "       -"
        print(f"{name:>8}  {sec:9.4f}  {speed}  {f:.10f}")
    if len(results) == 2:
        diff = abs(results["c"][1] - results["python"][1])
        print(f"|difference in log-likelihood| = {diff:.3e}")


if __name__ == "__main__":
    main()
