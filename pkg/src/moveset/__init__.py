"""Neural moving-mesh sampling (MMPDE-Net) and MS-PINN training on numpy and jax."""

import os


def _cap_threads():
    # must run before jax / BLAS start their pools
    n = os.environ.get("MOVESET_THREADS")
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        raise ValueError(f"MOVESET_THREADS must be a positive integer, got {n!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)
    flags = os.environ.get("XLA_FLAGS", "")
    if "intra_op_parallelism_threads" not in flags:
        extra = f"--xla_cpu_multi_thread_eigen={'true' if int(n) > 1 else 'false'} intra_op_parallelism_threads={n}"
        os.environ["XLA_FLAGS"] = f"{flags} {extra}".strip()


_cap_threads()

import jax  # noqa: E402

# derivative checks and reference evaluations run in double precision;
# training casts to the configured dtype explicitly
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
