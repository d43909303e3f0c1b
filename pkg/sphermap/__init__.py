from sphermap.convert import (
    RADIAL_STREAM,
    RGB_STREAM,
    PointCloud,
    SphericalMap,
    attach_stream,
    normalize_cloud,
    radial_distance_stream,
    to_spherical_map,
)
from sphermap.fileio import read_point_cloud, read_spherical_map, write_point_cloud, write_spherical_map
