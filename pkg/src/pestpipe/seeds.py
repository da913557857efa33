"""Seeded domain data: pest taxonomy, known metadata combinations, and the
production class scheme.

The combination table is the authoritative list of {species, portion, crop}
triples the collection protocol covers (78 in total, healthy included).
Leaf-dwelling pests are always photographed on both leaf sides, so leaf
coverage expands to leaf_front + leaf_back rows.
"""

from __future__ import annotations

CROPS = frozenset({"tomato", "strawberry", "cucumber", "eggplant"})
PORTIONS = frozenset({"leaf_front", "leaf_back", "fruit", "flower"})
HEALTHY = "healthy"

# Display name used in class naming: the two leaf sides share one label.
PORTION_DISPLAY = {
    "leaf_front": "leaf",
    "leaf_back": "leaf",
    "fruit": "fruit",
    "flower": "flower",
}

# (common_name, scientific_name, integration_group)
SPECIES = [
    ("broad mite", "Polyphagotarsonemus latus", "broad mite"),
    ("Kanzawa spider mite", "Tetranychus kanzawai", "spider mite"),
    ("twospotted spider mite", "Tetranychus urticae", "spider mite"),
    ("tomato russet mite", "Aculops lycopersici", "tomato russet mite"),
    ("greenhouse whitefly", "Trialeurodes vaporariorum", "whitefly"),
    ("tobacco whitefly", "Bemisia tabaci", "whitefly"),
    ("cotton aphid", "Aphis gossypii", "aphid"),
    ("green peach aphid", "Myzus persicae", "aphid"),
    ("Solanum mealybug", "Phenacoccus solani", "mealybug"),
    ("Madeira mealybug", "Phenacoccus madeirensis", "mealybug"),
    ("western flower thrips", "Frankliniella occidentalis", "thrips"),
    ("melon thrips", "Thrips palmi", "thrips"),
    ("onion thrips", "Thrips tabaci", "thrips"),
    ("Eurasian flower thrips", "Frankliniella intonsa", "thrips"),
    ("hadda beetle", "Henosepilachna vigintioctopunctata", "hadda beetle"),
    ("vegetable leafminer", "Liriomyza sativae", "leaf miner"),
    ("serpentine leafminer", "Liriomyza trifolii", "leaf miner"),
    ("tomato leafminer", "Liriomyza bryoniae", "leaf miner"),
    ("cotton bollworm", "Helicoverpa armigera", "cotton bollworm"),
    ("tobacco cutworm", "Spodoptera litura", "tobacco cutworm"),
]

# Compact coverage spec: species -> list of (portion_kind, crops).
# portion_kind "leaf" expands to leaf_front + leaf_back.
_COVERAGE = {
    "broad mite": [("leaf", ["cucumber", "eggplant"]),
                   ("fruit", ["strawberry", "eggplant"])],
    "Kanzawa spider mite": [("leaf", ["cucumber", "eggplant"])],
    "twospotted spider mite": [("leaf", ["cucumber", "eggplant", "strawberry"])],
    "tomato russet mite": [("leaf", ["tomato"])],
    "greenhouse whitefly": [("leaf", ["tomato"])],
    "tobacco whitefly": [("leaf", ["tomato", "cucumber"]), ("fruit", ["tomato"])],
    "cotton aphid": [("leaf", ["cucumber", "eggplant", "strawberry"]),
                     ("flower", ["strawberry"])],
    "green peach aphid": [("leaf", ["eggplant"])],
    "Solanum mealybug": [("leaf", ["eggplant"]), ("fruit", ["eggplant"])],
    "Madeira mealybug": [("leaf", ["eggplant"]), ("fruit", ["eggplant"])],
    "western flower thrips": [("fruit", ["strawberry", "tomato"]),
                              ("flower", ["strawberry"])],
    "melon thrips": [("leaf", ["cucumber", "eggplant"])],
    "onion thrips": [("flower", ["strawberry"])],
    "Eurasian flower thrips": [("flower", ["strawberry"]), ("fruit", ["strawberry"])],
    "hadda beetle": [("leaf", ["eggplant"])],
    "vegetable leafminer": [("leaf", ["eggplant"])],
    "serpentine leafminer": [("leaf", ["eggplant"])],
    "tomato leafminer": [("leaf", ["tomato"])],
    "cotton bollworm": [("fruit", ["tomato", "eggplant"])],
    "tobacco cutworm": [("leaf", ["strawberry", "eggplant"])],
    HEALTHY: [("leaf", ["tomato", "strawberry", "cucumber", "eggplant"]),
              ("fruit", ["strawberry", "cucumber", "tomato", "eggplant"]),
              ("flower", ["strawberry", "cucumber"])],
}


def known_combinations() -> frozenset[tuple[str, str, str]]:
    """All valid (pest_label, portion, crop) triples, 78 in total."""
    combos = set()
    for label, entries in _COVERAGE.items():
        for portion_kind, crops in entries:
            portions = ("leaf_front", "leaf_back") if portion_kind == "leaf" else (portion_kind,)
            for portion in portions:
                for crop in crops:
                    combos.add((label, portion, crop))
    return frozenset(combos)


# Production class scheme: 25 classes, IDs 1-18 are pest classes built by
# integrating the 78 raw combinations; 19-25 are the healthy classes.
# Each entry: (id, class_name, group_or_healthy, portion_kind or None, crop or None)
# portion/crop None means the class spans several of them.
MAIN_CLASSES = [
    (1, "Broad mite (fruit_strawberry)", "broad mite", "fruit", "strawberry"),
    (2, "Broad mite (fruit_eggplant)", "broad mite", "fruit", "eggplant"),
    (3, "Broad mite (leaf)", "broad mite", "leaf", None),
    (4, "Spider mites (leaf)", "spider mite", "leaf", None),
    (5, "Tomato russet mite (leaf_tomato)", "tomato russet mite", "leaf", "tomato"),
    (6, "Whitefly", "whitefly", None, None),
    (7, "Aphid", "aphid", None, None),
    (8, "Mealybug (fruit_eggplant)", "mealybug", "fruit", "eggplant"),
    (9, "Mealybug (leaf_eggplant)", "mealybug", "leaf", "eggplant"),
    (10, "Thrips (fruit_strawberry)", "thrips", "fruit", "strawberry"),
    (11, "Thrips (fruit_tomato)", "thrips", "fruit", "tomato"),
    (12, "Thrips (flower_strawberry)", "thrips", "flower", "strawberry"),
    (13, "Thrips (leaf)", "thrips", "leaf", None),
    (14, "Hadda beetle (leaf_eggplant)", "hadda beetle", "leaf", "eggplant"),
    (15, "Leafminer (leaf)", "leaf miner", "leaf", None),
    (16, "Cotton bollworm (fruit_tomato)", "cotton bollworm", "fruit", "tomato"),
    (17, "Cotton bollworm (fruit_eggplant)", "cotton bollworm", "fruit", "eggplant"),
    (18, "Tobacco cutworm (leaf)", "tobacco cutworm", "leaf", None),
    (19, "Healthy (fruit_strawberry)", HEALTHY, "fruit", "strawberry"),
    (20, "Healthy (fruit_cucumber)", HEALTHY, "fruit", "cucumber"),
    (21, "Healthy (fruit_tomato)", HEALTHY, "fruit", "tomato"),
    (22, "Healthy (fruit_eggplant)", HEALTHY, "fruit", "eggplant"),
    (23, "Healthy (flower_strawberry)", HEALTHY, "flower", "strawberry"),
    (24, "Healthy (flower_cucumber)", HEALTHY, "flower", "cucumber"),
    (25, "Healthy (leaf)", HEALTHY, "leaf", None),
]

MAIN_PEST_CLASS_IDS = tuple(cid for cid, _, grp, _, _ in MAIN_CLASSES if grp != HEALTHY)
