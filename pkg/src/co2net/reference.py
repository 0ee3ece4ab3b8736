"""Published results of the German cement/lime/steel case (Mio EUR).

Kept as regression data for the report arithmetic; the instance itself is far
beyond desk scale and is not shipped.
"""

SCENARIOS = {
    "S1": "Cement",
    "S2": "Cement, Lime",
    "S3": "Cement, Steel",
    "S4": "Cement, Lime, Steel",
}

EMISSIONS_MT_A = {"S1": 19.8, "S2": 27.0, "S3": 30.0, "S4": 37.2}
EMITTER_COUNT = {"S1": 35, "S2": 64, "S3": 44, "S4": 73}

# scenario -> (z_M1, z_M2, z_R)
TOTAL_COSTS = {
    "S1": (3141.325, 3141.325, 3497.485),
    "S2": (3979.308, 4997.963, 4426.101),
    "S3": (3946.124, 4422.603, 4400.765),
    "S4": (4702.754, 5653.400, 5130.106),
}

# scenario -> (potential, regret, benefit)
POTENTIAL_REGRET_BENEFIT = {
    "S1": (0.000, 356.161, -356.161),
    "S2": (1018.655, 446.792, 571.863),
    "S3": (476.479, 454.640, 21.839),
    "S4": (997.411, 427.352, 523.295),
}

TABLE_ROUNDING = 0.002
