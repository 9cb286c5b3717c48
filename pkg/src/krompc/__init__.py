"""Koopman reduced-order models for switched and bilinear model predictive control."""

from ._validation import NumericalError
from .dictionary import Dictionary, MonomialLifting, build_dictionary, lift, project
from .edmd import (
    EDMD,
    KoopmanModel,
    OnlineAccumulator,
    OnlineEDMD,
    SnapshotSet,
    accumulator_from_snapshots,
    edmd_fit,
    online_update,
    refit,
    weight_from_fraction,
)
from .krom import (
    BilinearModel,
    LocalizedBilinear,
    SwitchedBank,
    build_bilinear,
    build_localized,
    krom_step,
    predict_bilinear,
    predict_switched,
)
from .mpc import (
    MpcConfig,
    PlantOracle,
    UpdatePolicy,
    closed_loop,
    running_cost_window,
    solve_continuous,
    solve_switched,
    stage_cost,
)
from .plant import (
    BurgersConfig,
    BurgersPlant,
    EmptyBucketError,
    LinearTestPlant,
    VanDerPolPlant,
    VdpConfig,
    burgers_step,
    generate_snapshots,
    vdp_step,
)

__version__ = "0.1.0"

__all__ = [
    "NumericalError",
    "Dictionary",
    "MonomialLifting",
    "build_dictionary",
    "lift",
    "project",
    "EDMD",
    "OnlineEDMD",
    "KoopmanModel",
    "OnlineAccumulator",
    "SnapshotSet",
    "accumulator_from_snapshots",
    "edmd_fit",
    "online_update",
    "refit",
    "weight_from_fraction",
    "BilinearModel",
    "LocalizedBilinear",
    "SwitchedBank",
    "build_bilinear",
    "build_localized",
    "krom_step",
    "predict_bilinear",
    "predict_switched",
    "MpcConfig",
    "PlantOracle",
    "UpdatePolicy",
    "closed_loop",
    "running_cost_window",
    "solve_continuous",
    "solve_switched",
    "stage_cost",
    "BurgersConfig",
    "BurgersPlant",
    "EmptyBucketError",
    "LinearTestPlant",
    "VanDerPolPlant",
    "VdpConfig",
    "burgers_step",
    "generate_snapshots",
    "vdp_step",
]
