import pytest

from entmono import backend

BACKENDS = ["numba", "numpy"] if backend.numba_available() else ["numpy"]


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # pay any jit compile cost once, before timed/deterministic tests
    if backend.numba_available():
        prev = backend.active_backend()
        backend.use_backend("numba")
        from entmono import kernels

        kernels.warmup()
        backend.use_backend(prev)


@pytest.fixture(params=BACKENDS)
def kernel_backend(request):
    """Run the test under each available kernel backend."""
    prev = backend.active_backend()
    backend.use_backend(request.param)
    yield request.param
    backend.use_backend(prev)
