"""Headless multirotor simulation: rigid-body dynamics with propeller lag,
a nine-modality control cascade, procedurally generated infinite terrain,
ray-cast sensors, and a network session server."""

import os as _os

# this environment's TBB predates what numba supports; prefer OpenMP before
# numba probes the layers (user settings win)
_os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

from .control import (ActuatorThrottles, AttitudeThrottle, AccelHeading,
                      AccelHeadingRate, CascadeGains, ControlGroups,
                      ControllerState, PositionHeading, RateThrottle,
                      VelocityHeading, VelocityHeadingRate, accel_to_attitude,
                      attitude_error, mix_control_groups, resolve,
                      throttle_to_speed)
from .dynamics import (AllocationModel, DivergenceError, PropellerParams,
                       RigidBodyModel, StateDerivative, UavModel, UavState,
                       allocate, heading, motor_derivative, rk4_step,
                       state_derivative, thrust_from_speed)
from .sensors import (CameraConfig, DepthImage, GnssSample, ImuSample,
                      LabelImage, LidarConfig, MagSample, NoiseSpec,
                      PointCloud, depth_image, imu_sample, label_image,
                      lidar_scan, nav_samples)
from .simserver import (Session, SessionConfig, SensorSpec, SimServer,
                        UavConfig)
from .worldgen import (CellIndex, RayHit, TerrainCell, TerrainParams,
                       WorldState, generate_cell, make_world, perlin, raycast,
                       terrain_height, update_cells)

__version__ = "0.1.0"
