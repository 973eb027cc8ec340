"""Physical constants shared across modules."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

# WGS-84
EARTH_MU = 3.986004418e14  # m^3/s^2
EARTH_RADIUS = 6_378_137.0  # m, equatorial
EARTH_ROTATION_RATE = 7.2921150e-5  # rad/s
