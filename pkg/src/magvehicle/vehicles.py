"""Vehicle categories and the standard length intervals they map to."""

from enum import Enum


class VehicleType(str, Enum):
    MOTORBIKE = "Motorbike"
    SEDAN_SUV = "SedanSuv"
    LIGHT_TRUCK = "LightTruck"
    BUS = "Bus"
    MEDIUM_TRUCK = "MediumTruck"
    HEAVY_TRUCK = "HeavyTruck"
    SUPER_TRUCK = "SuperTruck"

    def __str__(self):
        return self.value


class LengthBin(str, Enum):
    B0_3 = "B0_3"
    B3_6 = "B3_6"
    B6_12 = "B6_12"
    B12_20 = "B12_20"

    def __str__(self):
        return self.value


# Half-open-below intervals (lo, hi] in meters.
BIN_INTERVALS = {
    LengthBin.B0_3: (0.0, 3.0),
    LengthBin.B3_6: (3.0, 6.0),
    LengthBin.B6_12: (6.0, 12.0),
    LengthBin.B12_20: (12.0, 20.0),
}

TYPE_BIN = {
    VehicleType.MOTORBIKE: LengthBin.B0_3,
    VehicleType.SEDAN_SUV: LengthBin.B3_6,
    VehicleType.LIGHT_TRUCK: LengthBin.B3_6,
    VehicleType.MEDIUM_TRUCK: LengthBin.B6_12,
    VehicleType.BUS: LengthBin.B6_12,
    VehicleType.HEAVY_TRUCK: LengthBin.B6_12,
    VehicleType.SUPER_TRUCK: LengthBin.B12_20,
}

# Row/column order used by every confusion matrix report.
TYPE_ORDER = [
    VehicleType.MOTORBIKE,
    VehicleType.SEDAN_SUV,
    VehicleType.LIGHT_TRUCK,
    VehicleType.BUS,
    VehicleType.MEDIUM_TRUCK,
    VehicleType.HEAVY_TRUCK,
    VehicleType.SUPER_TRUCK,
]

BIN_ORDER = [LengthBin.B0_3, LengthBin.B3_6, LengthBin.B6_12, LengthBin.B12_20]


def type_interval(vehicle_type):
    return BIN_INTERVALS[TYPE_BIN[VehicleType(vehicle_type)]]
