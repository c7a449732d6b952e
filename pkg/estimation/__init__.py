from .pose_filter import (
    GRAVITY,
    ControlInput,
    FilterState,
    NoiseConfig,
    PositionObservation,
    initial_state,
    propagate,
    run_filter,
    update,
)
