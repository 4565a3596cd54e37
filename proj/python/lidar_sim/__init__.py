"""Python access to the lidar_sim core (spec, networks, KPIs, CLI)."""

from ._lidar_sim import (  # noqa: F401
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    Error,
    FormatError,
    Network,
    RangeError,
    SensorModel,
    SensorSpec,
    encode_scan_csv,
    evaluate_csv,
    reference_epw,
    run_cli,
)

__all__ = [name for name in dir() if not name.startswith("_")]
