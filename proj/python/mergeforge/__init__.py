# SPDX-License-Identifier: Apache-2.0
"""Checkpoint merging (linear, SLERP, TIES, DARE-TIES), tensor archives and metrics."""

from ._core import (  # noqa: F401
    MergeforgeError,
    TensorArchive,
    aggregate_languages,
    cast,
    compute_delta,
    dare_ties_merge,
    enumerate_grid,
    eval_schedule,
    format_delta,
    harm_change,
    layer_index_of,
    linear_merge,
    read_archive,
    run_cli,
    slerp_merge,
    ties_merge,
    trim_by_magnitude,
    validate_compat,
    win_rate,
    write_archive,
)

__version__ = "0.1.0"
