"""Hot assembly kernels with a compiled backend and a NumPy fallback.

The compiled extension is used when it was built and imports cleanly. Set
``OTMESH_KERNELS=numpy`` to force the fallback.
"""
import os

from . import _numpy

numpy_backend = _numpy
compiled_backend = None

if os.environ.get("OTMESH_KERNELS", "").lower() != "numpy":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else numpy_backend
BACKEND = "compiled" if compiled_backend is not None and backend is compiled_backend else "numpy"

scatter_add = backend.scatter_add
gather_eval = backend.gather_eval
gather_grad = backend.gather_grad
integrate_test = backend.integrate_test
integrate_test_grad = backend.integrate_test_grad
det_adj2 = backend.det_adj2
det_adj3 = backend.det_adj3
expmap_points = backend.expmap_points
local_matrices = backend.local_matrices
sphere_det_adj = backend.sphere_det_adj
