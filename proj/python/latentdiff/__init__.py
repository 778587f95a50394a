"""Affine concept/shape operators over a diffusion loop, with a deterministic mock backend."""

from ._core import (
    LatentDiffError,
    affine_combine,
    classify,
    encode_prompt,
    fnv1a64,
    initial_latent,
    job_digest,
    lattice_point_count,
    lerp,
    plan_attachments,
    run_job,
    sample_grid,
    slerp,
)

__all__ = [
    "LatentDiffError",
    "affine_combine",
    "classify",
    "encode_prompt",
    "fnv1a64",
    "initial_latent",
    "job_digest",
    "lattice_point_count",
    "lerp",
    "plan_attachments",
    "run_job",
    "sample_grid",
    "slerp",
]
__version__ = "0.1.0"
