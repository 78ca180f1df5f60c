"""Desk-scale 3D-to-2D generative pre-training for point-cloud encoders.

The pipeline encodes a point cloud, "photographs" its features into a 2D grid
for a chosen camera pose, decodes that grid into an image and compares it
against a rendered view of the cloud.
"""

__version__ = "0.1.0"
