"""Function-based classification of CAD meshes from light-field silhouette views.

The pipeline renders 20 orthographic silhouettes of a normalized mesh from
the vertices of a regular dodecahedron, trains a residual CNN on the views,
and fuses per-view predictions with gradient-boosted trees plus majority
voting.
"""

__version__ = "0.1.0"
