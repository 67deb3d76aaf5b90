"""Python access to the affordance transfer core."""

from ._core import (
    AfftError,
    cosine_similarity,
    dihedral_apply,
    dihedral_codes,
    extract,
    generate_fixtures,
    metric_dtm,
    metric_nss,
    metric_sr,
    read_tensor,
    select_grasp,
    transfer,
    write_tensor,
)

__all__ = [
    "AfftError",
    "cosine_similarity",
    "dihedral_apply",
    "dihedral_codes",
    "extract",
    "generate_fixtures",
    "metric_dtm",
    "metric_nss",
    "metric_sr",
    "read_tensor",
    "select_grasp",
    "transfer",
    "write_tensor",
]
