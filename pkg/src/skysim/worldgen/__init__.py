from .bvh import CellGeometry, CompositeGeometry, RayHit
from .noise import hash_float01, perlin
from .terrain import (DEFAULT_MATERIAL_INTENSITY, FOLIAGE_MAX_HEIGHT,
                      SEMANTIC_GRASS, SEMANTIC_SKY, SEMANTIC_TERRAIN,
                      SEMANTIC_TREE, CellIndex, FoliageInstance, TerrainCell,
                      TerrainParams, generate_cell, terrain_height)
from .world import (WorldState, cell_visible, containing_cell, dump_obj,
                    make_world, raycast, required_cells, update_cells)

__all__ = [
    "CellGeometry", "CompositeGeometry", "RayHit", "hash_float01", "perlin",
    "DEFAULT_MATERIAL_INTENSITY", "FOLIAGE_MAX_HEIGHT", "SEMANTIC_GRASS",
    "SEMANTIC_SKY", "SEMANTIC_TERRAIN", "SEMANTIC_TREE", "CellIndex",
    "FoliageInstance", "TerrainCell", "TerrainParams", "generate_cell",
    "terrain_height", "WorldState", "cell_visible", "containing_cell",
    "dump_obj", "make_world", "raycast", "required_cells", "update_cells",
]
