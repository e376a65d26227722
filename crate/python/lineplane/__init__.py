from ._lineplane import (
    Line3D,
    LineplaneError,
    Plane,
    lambda_schedule,
    load_lines,
    load_planes,
    m1,
    run_cli,
)

__all__ = ["Line3D", "LineplaneError", "Plane", "lambda_schedule", "load_lines", "load_planes", "m1", "run_cli"]
