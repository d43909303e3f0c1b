from geometry.rotations import (
    Rotation,
    UnitVector,
    ViewpointAngles,
    angles_to_bins,
    bins_of_angles,
    decode_azimuth,
    decode_inclination,
    decompose,
    direction_of_angles,
    directions_to_angles,
    geodesic_degrees,
    random_rotation,
    rot_y,
    rot_z,
    sixd_to_rotation,
    viewpoint_from_direction,
    viewpoint_rotation,
    zyz_angles,
)
