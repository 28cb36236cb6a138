# incremental_app/evaluation.py
"""Protocolo de medición: exactitud sobre todas las clases vistas después de
cada sesión, matrices de confusión, sesgo hacia el último grupo y olvido.

`predict_fn` recibe un lote N x H x W x D y devuelve N ids de clase.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    """Evaluación imposible (conjunto vacío, matriz inválida)"""
    pass


def _predictions(predict_fn, test):
    preds = np.asarray(predict_fn(test.features), dtype=np.int64).reshape(-1)
    if len(preds) != len(test):
        raise EvaluationError(f"{len(preds)} predicciones para {len(test)} ejemplos")
    return preds


def evaluate(predict_fn, test):
    """Fracción de ejemplos con predicción igual a la etiqueta (micro promedio)"""
    if test is None or len(test) == 0:
        raise EvaluationError("Conjunto de prueba vacío")
    preds = _predictions(predict_fn, test)
    return float(np.mean(preds == test.labels))


@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray  # counts[verdadera][predicha]

    @property
    def total(self):
        return int(self.counts.sum())

    def accuracy(self):
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_dict(self):
        return {'labels': list(self.labels), 'counts': self.counts.tolist()}


def confusion_matrix(predict_fn, test, labels=None):
    """Conteos C x C; las filas suman los ejemplos de prueba por clase"""
    preds = _predictions(predict_fn, test)
    if labels is None:
        labels = sorted(set(int(c) for c in test.labels) | set(int(c) for c in preds))
    labels = [int(c) for c in labels]
    index = {c: i for i, c in enumerate(labels)}
    missing = (set(int(c) for c in test.labels) | set(int(c) for c in preds)) - set(index)
    if missing:
        raise EvaluationError(f"Clases fuera de la matriz de confusión: {sorted(missing)}")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    rows = np.array([index[int(c)] for c in test.labels], dtype=np.int64)
    cols = np.array([index[int(c)] for c in preds], dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)
    return ConfusionMatrix(labels=labels, counts=counts)


def last_group_bias(confusion, last_group_ids):
    """Fracción de ejemplos de clases VIEJAS predichos dentro del último grupo"""
    last = set(int(c) for c in last_group_ids)
    old_rows = [i for i, c in enumerate(confusion.labels) if c not in last]
    last_cols = [i for i, c in enumerate(confusion.labels) if c in last]
    total_old = int(confusion.counts[old_rows, :].sum()) if old_rows else 0
    if total_old == 0:
        raise EvaluationError("No hay ejemplos de prueba de clases viejas")
    into_last = int(confusion.counts[np.ix_(old_rows, last_cols)].sum()) if last_cols else 0
    return into_last / total_old


def forgetting(acc_matrix):
    """f_j = max_{i≥j} acc[i][j] − acc[T][j] para cada sesión j"""
    acc = acc_matrix.acc if isinstance(acc_matrix, AccuracyMatrix) else acc_matrix
    if not acc:
        return []
    final = len(acc) - 1
    if len(acc[final]) != len(acc):
        raise EvaluationError("La última fila de la matriz de exactitud está incompleta")
    return [
        float(max(acc[i][j] for i in range(j, len(acc))) - acc[final][j])
        for j in range(len(acc))
    ]


@dataclass
class AccuracyMatrix:
    acc: list = field(default_factory=list)
    seen_accuracy: list = field(default_factory=list)
    seen_counts: list = field(default_factory=list)

    def record(self, row, seen_accuracy, seen_count=None):
        if len(row) != len(self.acc) + 1:
            raise EvaluationError(f"Fila de largo {len(row)} en la sesión {len(self.acc)}")
        if any(not 0.0 <= a <= 1.0 for a in row):
            raise EvaluationError(f"Exactitudes fuera de [0, 1]: {row}")
        self.acc.append([float(a) for a in row])
        self.seen_accuracy.append(float(seen_accuracy))
        self.seen_counts.append(seen_count)

    def to_dict(self):
        return {'acc': [list(r) for r in self.acc], 'seen_accuracy': list(self.seen_accuracy)}


def evaluate_session(predict_fn, sessions, index, class_ids):
    """Exactitud por sesión 0..index, exactitud sobre lo visto y sesgo.

    Devuelve (fila, exactitud_vista, sesgo_último_grupo | None, confusión).
    """
    row = [evaluate(predict_fn, sessions[j].test) for j in range(index + 1)]
    seen = Dataset.concat([sessions[j].test for j in range(index + 1)], origin='test')
    seen_accuracy = evaluate(predict_fn, seen)
    confusion = confusion_matrix(predict_fn, seen, labels=sorted(class_ids))
    bias = last_group_bias(confusion, sessions[index].class_ids) if index > 0 else None
    logger.info(
        f"Sesión {index}: exactitud sobre {len(class_ids)} clases vistas = {seen_accuracy:.4f}"
    )
    return row, seen_accuracy, bias, confusion
