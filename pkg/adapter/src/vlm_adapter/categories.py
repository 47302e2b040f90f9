"""The unified category taxonomy exported to the engine: COCO-Stuff, 171
classes (80 things + 91 stuff regions), each with a curated size class.

Size classes map to voxel resolutions downstream (Small 2 cm, Medium 3 cm,
Large 5 cm). The assignment is a coarse manual prior: hand-held items are
Small, furniture-scale and vehicle-scale objects are Large, structural
stuff is Large, everything else Medium.
"""

THING_NAMES = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon",
    "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
]

STUFF_NAMES = [
    "banner", "blanket", "branch", "bridge", "building-other", "bush",
    "cabinet", "cage", "cardboard", "carpet", "ceiling-other", "ceiling-tile",
    "cloth", "clothes", "clouds", "counter", "cupboard", "curtain",
    "desk-stuff", "dirt", "door-stuff", "fence", "floor-marble",
    "floor-other", "floor-stone", "floor-tile", "floor-wood", "flower",
    "fog", "food-other", "fruit", "furniture-other", "grass", "gravel",
    "ground-other", "hill", "house", "leaves", "light", "mat", "metal",
    "mirror-stuff", "moss", "mountain", "mud", "napkin", "net", "paper",
    "pavement", "pillow", "plant-other", "plastic", "platform",
    "playingfield", "railing", "railroad", "river", "road", "rock", "roof",
    "rug", "salad", "sand", "sea", "shelf", "sky-other", "skyscraper",
    "snow", "solid-other", "stairs", "stone", "straw", "structural-other",
    "table", "tent", "textile-other", "towel", "tree", "vegetable",
    "wall-brick", "wall-concrete", "wall-other", "wall-panel", "wall-stone",
    "wall-tile", "wall-wood", "water-other", "waterdrops", "window-blind",
    "window-other", "wood",
]

_SMALL = {
    "fork", "knife", "spoon", "cup", "bottle", "wine glass", "bowl", "banana",
    "apple", "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza",
    "donut", "cake", "mouse", "remote", "cell phone", "book", "clock", "vase",
    "scissors", "toothbrush", "hair drier", "frisbee", "sports ball",
    "baseball glove", "tie", "bird", "napkin", "paper", "waterdrops", "fruit",
    "salad", "light", "flower", "straw",
}

_LARGE = {
    "couch", "bed", "dining table", "refrigerator", "bicycle", "car",
    "motorcycle", "airplane", "bus", "train", "truck", "boat", "bench",
    "horse", "cow", "elephant", "bear", "zebra", "giraffe", "person",
    "bridge", "building-other", "ceiling-other", "ceiling-tile", "clouds",
    "fence", "floor-marble", "floor-other", "floor-stone", "floor-tile",
    "floor-wood", "fog", "grass", "ground-other", "hill", "house",
    "mountain", "pavement", "platform", "playingfield", "railing",
    "railroad", "river", "road", "roof", "sand", "sea", "sky-other",
    "skyscraper", "snow", "stairs", "structural-other", "tent", "tree",
    "wall-brick", "wall-concrete", "wall-other", "wall-panel", "wall-stone",
    "wall-tile", "wall-wood", "water-other", "table", "counter", "cabinet",
    "cupboard", "curtain", "door-stuff", "carpet", "rug", "dirt", "gravel",
    "mud", "bush",
}


def size_class_for(name: str) -> str:
    if name in _SMALL:
        return "Small"
    if name in _LARGE:
        return "Large"
    return "Medium"


def coco_stuff_rows():
    """All 171 categories as (id, name, kind, size_class) rows."""
    rows = []
    for i, name in enumerate(THING_NAMES):
        rows.append((i, name, "thing", size_class_for(name)))
    for j, name in enumerate(STUFF_NAMES):
        rows.append((len(THING_NAMES) + j, name, "stuff", size_class_for(name)))
    return rows
