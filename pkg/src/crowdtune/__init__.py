"""Collaborative auto-tuning toolkit.

Schema-free experiment repository, unified access function, tuning
pipelines, statistics of repeated runs, Pareto exploration, online
piecewise behavior models and a small HTTP server for pooling results.
"""

from .dispatch import Kernel
from .errors import CmError, ValidationError
from .modules import default_kernel
from .repo import Cid, Repository, find_repo, init_repo, merge_repos, open_repo

__version__ = "0.1.0"

__all__ = [
    "Cid",
    "CmError",
    "Kernel",
    "Repository",
    "ValidationError",
    "default_kernel",
    "find_repo",
    "init_repo",
    "merge_repos",
    "open_repo",
]
