from .backend import BACKEND, kernels  # noqa: F401
