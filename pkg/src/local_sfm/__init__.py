"""Local structure-from-motion over a short frame window.

Poses and depth adjustments come from a Hough-accelerated multi-view RANSAC,
root-frame depth from a voxel frustum field, and a sparse point cloud from
multi-view geometric verification.
"""

__version__ = "0.1.0"
