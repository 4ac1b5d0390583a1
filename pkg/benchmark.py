import sys
import time
import statistics
from fiberlim.fib_cells import annulus_energy
from fiberlim.fib_fem import assemble_elasticity
from fiberlim.fib_geometry import StructuredGrid
from fiberlim.fib_limit import BodyForce, solve_limit
from fiberlim.fib_material import LameCoefficients, effective_coefficients, lame_from_kappa


def time_kernel(label, kernel, n_iterations):
    """Run kernel n_iterations times; returns timing statistics and the first result."""
    print(f"\n{label}")
    durations = []
    first = None
    for i in range(n_iterations):
        tic = time.time()
        outcome = kernel()
        elapsed = time.time() - tic
        durations.append(elapsed)
        if first is None:
            first = outcome
        print(f"  run {i+1}/{n_iterations}: {elapsed:.4f} s -> {outcome}")

    stats = {
        "mean": statistics.mean(durations),
        "median": statistics.median(durations),
        "best": min(durations),
        "spread": statistics.stdev(durations) if n_iterations > 1 else 0.0,
        "result": first,
    }
    print(f"  mean {stats['mean']:.4f} s, median {stats['median']:.4f} s, "
          f"best {stats['best']:.4f} s, stdev {stats['spread']:.4f} s")
    return stats


def run_benchmark(n_iterations=5, threads=1):
    print(f"Timing fiberlim kernels: {n_iterations} runs each, {threads} worker(s)")

    base = LameCoefficients(lam=1.0, mu=1.0)
    eff = effective_coefficients(base, 2.0, 1.0, 1.0)
    load = BodyForce.from_expressions(["0", "0", "1"])
    coarse = StructuredGrid.from_elements(1.0, 1.0, 1.0, 24, 24, 24)
    fibered = StructuredGrid.from_elements(1.0, 1.0, 1.0, 56, 56, 8)

    kernels = [
        ("annulus energy (1,1) at R = 1e6, kappa = 2",
         lambda: f"{annulus_energy(1, 1, 1e6, lame_from_kappa(2.0), threads=threads):.10f}"),
        ("stiffness assembly on 56x56x8 elements",
         lambda: f"{assemble_elasticity(fibered, 1.0, 1.0, threads=threads).nnz} nonzeros"),
        ("critical limit solve on 24^3 elements",
         lambda: f"{solve_limit(coarse, base, eff, load, threads=threads)[0].info['iterations']} CG iterations"),
    ]
    timings = {label: time_kernel(label, kernel, n_iterations) for label, kernel in kernels}

    print("\nSummary:")
    for label, stats in timings.items():
        print(f"{label}: {stats['mean']:.4f}s mean ({stats['result']})")


if __name__ == "__main__":
    run_benchmark(threads=int(sys.argv[1]) if len(sys.argv) > 1 else 1)
