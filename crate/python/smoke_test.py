"""Smoke test for the densemap Python module.

Build and install first:
    cd crates/python && maturin build --release -o dist
    pip install --no-build-isolation dist/densemap-*.whl
"""

import math
import tempfile
from pathlib import Path

import numpy as np

import densemap


def main():
    rig = densemap.StereoRig(fx=450.0, baseline=5.0, width=640, height=480)
    assert rig.fy == 450.0 and rig.cx == 319.5

    assert abs(densemap.triangulate_depth(rig, 12.5) - 180.0) < 1e-12
    assert densemap.triangulate_depth(rig, 0.0) is None

    pose = densemap.Pose(translation=(1.0, 2.0, 3.0))
    x, y, z = densemap.backproject_point(rig, pose, 319.5, 239.5, 100.0)
    assert (x, y, z) == (1.0, 2.0, 103.0)
    u, v, d = densemap.project_point(rig, pose, (x, y, z))
    assert abs(u - 319.5) < 1e-9 and abs(v - 239.5) < 1e-9 and abs(d - 100.0) < 1e-9
    assert densemap.project_point(rig, pose, (0.0, 0.0, -5.0)) is None
    assert np.allclose(pose.matrix()[:3, 3], [1.0, 2.0, 3.0])

    frame = densemap.render_scene("plane", seed=3)
    left, right = frame["left"], frame["right"]
    assert left.shape == (480, 640) and left.dtype == np.float32

    field = densemap.match_pair(left, right, densemap.MatcherConfig())
    disp = field.disparity()
    good = np.abs(disp - 12.5) <= 0.25
    assert good.mean() >= 0.95, good.mean()
    assert field.valid_count() == int(field.valid().sum())

    oracle = densemap.exhaustive_disparity(left[:, :200], right[:, :200], max_disparity=16)
    od = oracle.disparity()
    assert np.nanmedian(od) in (12.0, 13.0)

    gmap = densemap.GlobalMap()
    culled, added, size = gmap.integrate(rig, frame["pose"], frame["depth"], 0, color=frame["color"])
    assert (culled, added, size) == (0, 76800, 76800)
    culled, added, size = gmap.integrate(rig, frame["pose"], frame["depth"], 1)
    assert culled == 76800 and size == 76800
    assert gmap.points().shape == (76800, 3)

    report = densemap.evaluate_map(gmap, frame["reference"], cutoff=5.0)
    assert report["inlier_count"] == 76800 and report["mean_mm"] < 1e-3

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "map.ply"
        gmap.export_ply(str(path))
        assert len(densemap.GlobalMap.from_ply(str(path))) == 76800

    try:
        densemap.MatcherConfig(patch_size=0)
    except densemap.DensemapError as e:
        assert "patch" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    assert math.isfinite(report["median_mm"])
    print("python smoke test passed")


if __name__ == "__main__":
    main()
