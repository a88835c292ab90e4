from .core import LabelMap, MultiChannelVolume, Volume, as_binary, spacing_of, voxel_volume
from .edt import boundary_voxels, distance_map, edt, squared_edt
from .morphology import morph_close
from .nifti import load_labelmap, load_volume, save_volume
from .ops import crop, one_hot
from .sampling import resample, sample_grid, sample_points

__all__ = [
    "LabelMap", "MultiChannelVolume", "Volume", "as_binary", "boundary_voxels", "crop",
    "distance_map", "edt", "load_labelmap", "load_volume", "morph_close", "one_hot",
    "resample", "sample_grid", "sample_points", "save_volume", "spacing_of", "squared_edt",
    "voxel_volume",
]
