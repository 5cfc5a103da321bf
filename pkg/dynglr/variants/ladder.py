g2 = {
    "name": "G-2",
    "steps": ["generate", "unit_weight", "regularize"],
    "predict": "glr",
    "sampling": True,
}

g12 = {
    "name": "G-12",
    "steps": ["generate", "weight", "regularize"],
    "predict": "glr",
    "sampling": True,
}

g1232 = {
    "name": "G-1232",
    "steps": ["generate", "weight", "regularize", "update", "unit_weight", "regularize"],
    "predict": "glr",
    "sampling": True,
}

g12312 = {
    "name": "G-12312",
    "steps": ["generate", "weight", "regularize", "update", "weight", "regularize"],
    "predict": "glr",
    "sampling": True,
}
