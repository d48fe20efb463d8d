"""voxstream: animated sparse radiance volumes as streamable 2D feature video.

Pipeline: synthesize volumes -> occupancy + adaptive frame groups ->
Morton-ordered 3D<->2D mapping tables -> per-frame feature images ->
deferred volumetric rendering / sequential fitting -> block-DCT codec ->
bundled assets served over HTTP to a browser player.
"""

__version__ = "0.1.0"

FEATURE_DIM = 12  # appearance feature channels per voxel vertex
DENSITY_GAMMA = 0.003  # occupancy threshold on density
PIXEL_BUDGET = 512 * 512  # default per-group pixel limit
