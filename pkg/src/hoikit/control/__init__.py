"""Kinematics, residual action integration, and action-representation adapters."""

from .kinematics import (
    FINGER_BASES,
    FINGER_LINKS,
    IK_LAMBDA,
    IK_TOL_POS,
    IK_TOL_ROT,
    LIMIT_MARGIN_EPS,
    IkResult,
    Joint,
    JointLimitReport,
    KinematicChain,
    LimitEvent,
    default_arm,
    default_finger,
    default_hand,
    finger_ik,
    fk,
    ik_dls,
    jacobian,
    joint_limit_report,
    load_chain,
    save_chain,
)
from .residual import (
    ADAPTERS,
    ADAPTER_DIMS,
    FINGERTIP_KEYPOINTS,
    NUM_FINGERS,
    RESIDUAL_DIM,
    ActionChannels,
    AdapterState,
    ControlStack,
    JointAdapterConfig,
    ResidualConfig,
    ResidualState,
    TaskTarget,
    apply_residual,
    default_stack,
    ema_filter,
    integrate_residual,
    joint_abs_step,
    joint_res_step,
    load_residual_config,
    object_centric_step,
    retarget_step,
    target_from_frame,
    save_residual_config,
    scale_to_limits,
    task_abs_step,
    task_residual_step,
    task_residual_target,
    upsample_commands,
)

__all__ = [name for name in dir() if not name.startswith("_")]
