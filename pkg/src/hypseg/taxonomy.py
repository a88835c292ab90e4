"""Label ids and names for hypothalamic structures.

Tissue clusters from k-means occupy 1..k. Hypothalamic structures use a
reserved band so that merging never collides with tissue ids.
"""
SUBREGION_PARTS = (
    "anterior_superior",
    "anterior_inferior",
    "tuberal_superior",
    "tuberal_inferior",
    "posterior",
)

LEFT_SUBREGIONS = tuple(range(101, 106))
RIGHT_SUBREGIONS = tuple(range(106, 111))
SUBREGION_IDS = LEFT_SUBREGIONS + RIGHT_SUBREGIONS
LEFT_FORNIX, RIGHT_FORNIX = 111, 112
FORNIX_IDS = (LEFT_FORNIX, RIGHT_FORNIX)
HYPO_IDS = SUBREGION_IDS + FORNIX_IDS
RESERVED_BAND = (101, 112)

SUBREGION_NAMES = {
    **{i: f"left_{p}" for i, p in zip(LEFT_SUBREGIONS, SUBREGION_PARTS)},
    **{i: f"right_{p}" for i, p in zip(RIGHT_SUBREGIONS, SUBREGION_PARTS)},
}
HYPO_NAMES = {**SUBREGION_NAMES, LEFT_FORNIX: "left_fornix", RIGHT_FORNIX: "right_fornix"}

CONTRALATERAL = {
    **{l: r for l, r in zip(LEFT_SUBREGIONS, RIGHT_SUBREGIONS)},
    **{r: l for l, r in zip(LEFT_SUBREGIONS, RIGHT_SUBREGIONS)},
    LEFT_FORNIX: RIGHT_FORNIX,
    RIGHT_FORNIX: LEFT_FORNIX,
}

# class index used by the 13-channel subregion network: 0 background,
# 1..10 subregions, 11..12 fornices
SUB_CLASS_IDS = (0,) + HYPO_IDS
N_SUB_CLASSES = len(SUB_CLASS_IDS)

# three-group reporting: anterior, tuberal, posterior per side
REGION_GROUPS = {
    "left_anterior": (101, 102),
    "left_tuberal": (103, 104),
    "left_posterior": (105,),
    "right_anterior": (106, 107),
    "right_tuberal": (108, 109),
    "right_posterior": (110,),
    "whole": SUBREGION_IDS,
}

# FreeSurfer colour-table ids used in whole-brain maps
FS_LEFT_VDC, FS_RIGHT_VDC, FS_THIRD_VENTRICLE = 28, 60, 14


def tissue_names(k):
    return {i: f"tissue_{i}" for i in range(1, k + 1)}
