# incremental_app/baselines.py
"""Métodos de comparación con el mismo núcleo numérico que el banco:

- ER con BiC: una sola cabeza que agrega salidas por sesión, repetición
  desde la memoria y decaimiento exponencial del learning rate.
- GDumb: actualiza la memoria al comienzo de la sesión y entrena desde cero
  sólo con la memoria.
"""
import logging
import math
import time

import numpy as np

from .classifier_bank import ClassifierBankError, HeadStack, PartialClassifier
from .trainer import (
    SessionReport, TrainingError, buffer_histogram, fit_bic, fit_model,
    merge_validation, update_memory,
)

logger = logging.getLogger(__name__)


class SingleHeadModel(HeadStack):
    """Una cabeza con la misma arquitectura que un clasificador parcial cuya
    salida crece con las clases vistas; nunca se congela."""

    def __init__(self, depth, width, use_activation=True):
        super().__init__(depth, use_activation)
        self.width = int(width)
        self.groups = []

    @property
    def head(self):
        return self.heads[0] if self.heads else None

    @property
    def session_groups(self):
        return [list(g) for g in self.groups]

    def reinitialize(self, groups, rng):
        """Pesos nuevos para todas las clases de `groups` (GDumb)"""
        self.heads = []
        self.groups = []
        self.bic = None
        for group in groups:
            extend_head(self, group, rng)

    def to_dict(self):
        payload = super().to_dict()
        payload['width'] = self.width
        payload['groups'] = self.session_groups
        return payload

    @classmethod
    def from_dict(cls, payload):
        model = cls(payload['depth'], payload['width'], payload.get('use_activation', True))
        model._load_state(payload)
        model.groups = [[int(c) for c in g] for g in payload.get('groups', [])]
        if sum(len(g) for g in model.groups) != model.num_classes:
            raise ClassifierBankError(
                f"Grupos guardados ({model.groups}) no cubren las {model.num_classes} salidas"
            )
        return model


def extend_head(model, class_ids, rng):
    """Agrega len(class_ids) columnas Glorot a W_out y ceros a b_out.

    Las columnas existentes no cambian. En un modelo vacío primero se sortea la
    proyección, en el mismo orden que una cabeza parcial nueva.
    """
    class_ids = [int(c) for c in class_ids]
    if not class_ids:
        raise TrainingError("extend_head requiere al menos una clase nueva")
    overlap = set(class_ids) & set(model.class_ids)
    if overlap:
        raise TrainingError(f"Clases ya presentes en el modelo: {sorted(overlap)}")

    if model.head is None:
        head = PartialClassifier.initialize(model.depth, model.width, class_ids, rng,
                                            model.use_activation)
        model.heads = [head]
    else:
        head = model.head
        total = head.num_outputs + len(class_ids)
        limit = math.sqrt(6.0 / (head.width + total))
        new_cols = rng.uniform_array((head.width, len(class_ids)), -limit, limit)
        head.W_out = np.concatenate([head.W_out, new_cols], axis=1)
        head.b_out = np.concatenate([head.b_out, np.zeros(len(class_ids))])
        head.class_ids = head.class_ids + class_ids
    model.groups.append(class_ids)
    logger.debug(f"Cabeza única extendida a {model.num_classes} salidas")
    return head


def er_train_session(model, session, buffer, cfg, rng, use_bic=True):
    """Sesión de ER: extiende la cabeza y entrena todos sus parámetros"""
    started = time.perf_counter()
    if len(session.train) == 0:
        raise TrainingError("La sesión no tiene ejemplos de entrenamiento")
    overlap = set(session.class_ids) & set(model.class_ids)
    if overlap:
        raise TrainingError(f"Clases ya aprendidas en sesiones previas: {sorted(overlap)}")

    logger.info(f"=== SESIÓN ER {len(model.groups)}: clases {list(session.class_ids)} ===")
    extend_head(model, session.class_ids, rng)
    report = SessionReport(trainable_params=model.count_trainable_params())
    val = merge_validation(session.val, buffer.as_dataset('val'))
    fit_model(model, session.train, buffer, val, cfg, rng, report)

    update_memory(buffer, session, rng)
    if use_bic:
        report.alpha, report.beta = fit_bic(model, buffer, cfg)
    else:
        model.bic = None
    report.buffer_histogram = buffer_histogram(buffer)
    report.wall_time = time.perf_counter() - started
    logger.info(f"Sesión ER terminada: {report.epochs_run} épocas, {report.wall_time:.2f}s")
    return report


def gdumb_train_session(model, session, buffer, cfg, rng):
    """Sesión de GDumb: memoria primero, reinicio y entrenamiento sólo con memoria"""
    started = time.perf_counter()
    overlap = set(session.class_ids) & set(model.class_ids)
    if overlap:
        raise TrainingError(f"Clases ya aprendidas en sesiones previas: {sorted(overlap)}")

    logger.info(f"=== SESIÓN GDUMB {len(model.groups)}: clases {list(session.class_ids)} ===")
    update_memory(buffer, session, rng)
    train = buffer.as_dataset('train')
    if train is None or len(train) == 0:
        raise TrainingError("La memoria de entrenamiento está vacía")

    model.reinitialize(model.session_groups + [list(session.class_ids)], rng)
    report = SessionReport(trainable_params=model.count_trainable_params())
    val = merge_validation(buffer.as_dataset('val'))
    fit_model(model, train, None, val, cfg, rng, report)

    model.bic = None
    report.buffer_histogram = buffer_histogram(buffer)
    report.wall_time = time.perf_counter() - started
    logger.info(f"Sesión GDumb terminada: {report.epochs_run} épocas sobre {len(train)} ejemplos")
    return report
