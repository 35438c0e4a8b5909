"""Select the session kernel: compiled when available, else pure Python.

Set ``QMGRAPH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernel_py


def load_backend(name: str):
    if name == "python":
        return _kernel_py.run_session
    if name == "cython":
        from . import _kernel

        return _kernel.run_session
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("QMGRAPH_PURE_PYTHON"):
    BACKEND = "python"
else:
    BACKEND = available_backends()[0]

run_session = load_backend(BACKEND)
