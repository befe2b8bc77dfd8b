"""Material Point Method solver for sand dynamics."""

from splatsim.mpm.checkpoints import read_checkpoint, read_manifest, write_checkpoint
from splatsim.mpm.sand import kirchhoff_batch, project_hencky, stress, yield_value
from splatsim.mpm.solver import (
    SimState,
    apply_boundary,
    g2p,
    grid_forces,
    grid_update,
    init_particles,
    make_state,
    p2g,
    run,
    step,
    update_F,
    weights,
)
from splatsim.mpm.types import (
    FACES,
    SOURCE_NONE,
    GridState,
    MaterialParams,
    ParticleSet,
    SimConfig,
)

__all__ = [
    "FACES", "GridState", "MaterialParams", "ParticleSet", "SimConfig",
    "SimState", "SOURCE_NONE", "apply_boundary", "g2p", "grid_forces",
    "grid_update", "init_particles", "kirchhoff_batch", "make_state", "p2g",
    "project_hencky", "read_checkpoint", "read_manifest", "run", "step",
    "stress", "update_F", "weights", "write_checkpoint", "yield_value",
]
