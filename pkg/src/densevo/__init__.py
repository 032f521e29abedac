"""densevo: dense-depth-guided LiDAR-visual odometry.

Subsystems:

* :mod:`densevo.geometry`   pose algebra (quaternion + translation, float64)
* :mod:`densevo.pyramid`    attention-fused RGB-D feature pyramid
* :mod:`densevo.costvol`    normalized correlation cost volume
* :mod:`densevo.flow`       depth-modulated coarse-to-fine optical flow
* :mod:`densevo.posenet`    hierarchical residual pose refinement
* :mod:`densevo.loss`       scale-aware multi-level pose loss
* :mod:`densevo.network`    the full two-frame odometry network
* :mod:`densevo.data`       KITTI ingestion, depth completion, synthetic scenes
* :mod:`densevo.evalkit`    odometry metrics and visualization
* :mod:`densevo.cli`        train / evaluate / infer / plot / selftest commands
"""

__version__ = "0.1.0"
