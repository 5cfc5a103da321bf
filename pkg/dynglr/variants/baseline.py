dml_knn = {
    "name": "DML-KNN",
    "steps": ["generate"],
    "predict": "knn",
    "sampling": False,
}
