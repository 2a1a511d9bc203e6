"""Versioned layout of the per-neighbor-pair feature vector.

A pair (query point p, dense-cloud neighbor p') is described by
2K + 3 scalars, in this fixed order:

    [0]            Euclidean distance ||p - p'||
    [1 .. K]       query pseudo-label row v(p)
    [K+1 .. 2K]    neighbor pseudo-label row v(p')
    [2K+1]         temporal offset of p' normalized by the window (in (-1, +1))
    [2K+2]         range of p' to its own sensor origin

The layout version is recorded in refinement manifests so stored features
and checkpoints can be validated against the code that reads them.
"""

PHI_LAYOUT_VERSION = 1


def feature_dim(num_classes: int) -> int:
    return 2 * num_classes + 3


def num_classes_of(feature_dim_: int) -> int:
    if feature_dim_ < 5 or (feature_dim_ - 3) % 2 != 0:
        raise ValueError(f"{feature_dim_} is not a valid feature dimension (must be 2K+3)")
    return (feature_dim_ - 3) // 2


DISTANCE_COLUMN = 0


def query_label_columns(num_classes: int) -> slice:
    return slice(1, 1 + num_classes)


def neighbor_label_columns(num_classes: int) -> slice:
    return slice(1 + num_classes, 1 + 2 * num_classes)


def temporal_column(num_classes: int) -> int:
    return 2 * num_classes + 1


def sensor_distance_column(num_classes: int) -> int:
    return 2 * num_classes + 2
