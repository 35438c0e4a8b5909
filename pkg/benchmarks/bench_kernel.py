"""Time the compiled and pure-Python session kernels on the same workload.

    python3 benchmarks/bench_kernel.py --sessions 20 --p 0.004

Both backends consume identical random streams, so the script also checks
that their outcome counts and rate estimates agree.
"""

import argparse
import time

from qmgraph.protocol.engine import ProtocolConfig, run_sessions
from qmgraph.protocol.kernel import available_backends


def bench(backend: str, config: ProtocolConfig, repeats: int) -> tuple[float, tuple]:
    best = float("inf")
    summary = ()
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = run_sessions(config, keep_log=False, backend=backend)
        best = min(best, time.perf_counter() - t0)
        summary = (sorted(res.outcome_counts.items()), res.expected_rate_hhhh())
    return best, summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sessions", type=int, default=20)
    ap.add_argument("--p", type=float, default=0.004)
    ap.add_argument("--strategy", default="memory_enhanced", choices=["memory_enhanced", "simultaneous"])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    config = ProtocolConfig(rng_seed=args.seed, n_sessions=args.sessions, strategy=args.strategy).with_p(args.p)
    cycles = config.n_sessions * config.cycles_per_session
    print(f"{cycles:.3g} cycles, strategy={config.strategy}, p={args.p}")

    run_sessions(config, keep_log=False)  # build the cached storage tables before timing
    results = {}
    for name in available_backends():
        elapsed, summary = bench(name, config, args.repeats)
        results[name] = (elapsed, summary)
        print(f"{name:>8}: {elapsed:8.3f} s  {cycles / elapsed / 1e6:8.2f} Mcycles/s  {dict(summary[0])}")

    if len(results) == 2:
        (tc, pc), (tp, pp) = results["cython"], results["python"]
        print(f"speedup: {tp / tc:.1f}x, outputs {'agree' if pc == pp else 'DIFFER'}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
