import numpy as np
import pytest

from semnav.geometry import Intrinsics, RigidPose
from semnav.session import PipelineConfig
from semnav.synth import NoiseSpec, SceneObject, SceneSpec, arc_trajectory


def small_intrinsics(width=64, height=48) -> Intrinsics:
    return Intrinsics(fx=55.4, fy=55.4, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def random_rotation(rng) -> np.ndarray:
    from scipy.spatial.transform import Rotation
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


def random_pose(rng, trans_scale=2.0) -> RigidPose:
    return RigidPose(random_rotation(rng), rng.normal(0, trans_scale, 3))


def room_scene(
    frames=30,
    objects=None,
    noise=None,
    seed=1,
    width=64,
    height=48,
    deg0=200,
    deg1=340,
) -> SceneSpec:
    """Default test scene: a camera arcing inside a 6x5x3 room."""
    if objects is None:
        objects = [
            SceneObject(class_id=2, box_min=np.array([2.6, 2.2, 0.0]),
                        box_max=np.array([3.1, 2.7, 0.8])),
            SceneObject(class_id=3, box_min=np.array([3.6, 2.8, 0.0]),
                        box_max=np.array([4.1, 3.3, 0.6])),
        ]
    return SceneSpec(
        room=np.array([6.0, 5.0, 3.0]),
        trajectory=arc_trajectory(center=(3.0, 2.5), radius=1.5, height=1.5,
                                  deg0=deg0, deg1=deg1, target=(3.0, 2.5, 0.8),
                                  frames=frames),
        intrinsics=small_intrinsics(width, height),
        objects=objects,
        noise=noise or NoiseSpec(),
        seed=seed,
    )


def generated_records(spec: SceneSpec, config: PipelineConfig):
    """Stream FrameRecords straight from the generator, skipping disk I/O."""
    from semnav.geometry import DepthMap
    from semnav.session import FrameRecord, InstanceMask
    from semnav.synth import SessionGenerator

    for gen in SessionGenerator(spec, config).generate():
        masks = [
            InstanceMask(instance_id=inst, class_id=cls, mask=gen.raster == inst)
            for inst, cls in sorted(gen.mask_classes.items())
        ]
        yield FrameRecord(
            index=gen.index,
            sensor_depth=DepthMap(gen.sensor_depth),
            pred_depth=DepthMap(np.maximum(gen.pred_depth, 0.0)),
            pred_confidence=gen.pred_conf,
            local_pose=gen.local_pose,
            intrinsics=spec.intrinsics,
            instance_masks=masks,
            track_points=gen.tracks,
        )


@pytest.fixture
def config() -> PipelineConfig:
    return PipelineConfig(block_size=10, anchor_count=10)
