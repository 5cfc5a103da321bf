from dynglr.variants.baseline import dml_knn
from dynglr.variants.ladder import g2, g12, g1232, g12312
from lib import ConfigError

variants = [dml_knn, g2, g12, g1232, g12312]

LADDER = ["DML-KNN", "G-2", "G-2s", "G-12", "G-12s", "G-1232", "G-1232s", "G-12312", "G-12312s"]


def get_variant(name):
    """Returns (recipe, sampling) for names like 'G-12312' or 'G-12312s'."""
    for variant in variants:
        if name == variant["name"]:
            return variant, False
        if variant["sampling"] and name == f"{variant['name']}s":
            return variant, True
    raise ConfigError(f"unknown variant {name}, expected one of {LADDER}")


def ladder_position(name):
    return LADDER.index(name) if name in LADDER else len(LADDER)
