"""Event-fused dynamic gaussian splatting: python surface of the C++ core."""

from ._core import (
    Camera,
    NumericalError,
    ValidationError,
    accumulate_window,
    covariance_from_params,
    drms,
    encode_time,
    evaluate_checkpoint,
    event_loss,
    generate_scene,
    look_at,
    predicted_log_diff,
    psnr,
    render,
    run_training,
    simulate_events,
)

__all__ = [
    "Camera",
    "NumericalError",
    "ValidationError",
    "accumulate_window",
    "covariance_from_params",
    "drms",
    "encode_time",
    "evaluate_checkpoint",
    "event_loss",
    "generate_scene",
    "look_at",
    "predicted_log_diff",
    "psnr",
    "render",
    "run_training",
    "simulate_events",
]
