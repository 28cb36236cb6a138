"""Modelos y flujos chicos compartidos por los tests"""
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import override_settings

from incremental_app.classifier_bank import ClassifierBank, PartialClassifier
from incremental_app.datasets import LabeledExample, gen_gaussian_blobs, split_into_groups
from incremental_app.memory_buffer import ReplayBuffer
from incremental_app.numerics import Rng
from incremental_app.trainer import SessionConfig


def small_config(**overrides):
    values = dict(lr0=0.05, batch_size=8, max_epochs=6, stop_patience=3, lr_patience=2,
                  hidden_width=4, bic_epochs=20, bic_lr=0.01)
    values.update(overrides)
    return SessionConfig(**values)


def small_stream(num_classes=4, num_splits=2, dim=4, n_train=20, n_test=6, seed=0):
    train, test = gen_gaussian_blobs(num_classes, dim, n_train, n_test, 3.0, Rng(seed))
    return split_into_groups(train, test, num_splits, 0.10, Rng(seed + 1))


def _selector(rows, cols):
    W = np.zeros((4, len(cols)))
    for j, r in enumerate(rows):
        W[r, j] = 1.0
    return W


def biased_bank(inflation=4.0):
    """Banco de dos cabezas sobre características 4-dim: la cabeza vieja
    (clases 0, 1) lee las dimensiones 0 y 1, la nueva (2, 3) las 2 y 3 más
    `inflation` en sus logits"""
    old = PartialClassifier(np.eye(4), np.zeros(4), _selector([0, 1], [0, 1]), np.zeros(2),
                            [0, 1], frozen=True, use_activation=False)
    new = PartialClassifier(np.eye(4), np.zeros(4), _selector([2, 3], [2, 3]),
                            np.full(2, float(inflation)), [2, 3], use_activation=False)
    bank = ClassifierBank(4, use_activation=False)
    bank.heads = [old, new]
    return bank


def validation_buffer(per_class=10, seed=0, noise=0.1):
    """Memoria con ejemplos de validación 3·e_c + ruido para las clases 0..3"""
    rng = Rng(seed)
    buffer = ReplayBuffer(100, val_capacity=4 * per_class)
    items = []
    for c in range(4):
        for _ in range(per_class):
            x = 3.0 * np.eye(4)[c] + noise * rng.normal_array((4,))
            items.append(LabeledExample(x.reshape(1, 1, 4), c, 'val'))
    buffer.update('val', items, rng)
    return buffer


def blob_config(**overrides):
    """Configuración de corrida chica sobre blobs de 4 clases"""
    data = {
        'method': 'ours',
        'num_splits': 2,
        'memory_capacity': 20,
        'seed': 0,
        'blobs': {'num_classes': 4, 'dim': 4, 'n_train_per_class': 20,
                  'n_test_per_class': 5, 'separation': 3.0},
        'session': {'max_epochs': 3, 'batch_size': 8, 'hidden_width': 4,
                    'stop_patience': 2, 'lr_patience': 1, 'bic_epochs': 10, 'lr0': 0.05},
    }
    data.update(overrides)
    return data


class TemporaryReportsRootMixin:
    """REPORTS_ROOT apuntando a un directorio temporal durante cada test"""

    def setUp(self):
        super().setUp()
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)
        override = override_settings(
            CONTINUAL_LEARNING={**settings.CONTINUAL_LEARNING, 'REPORTS_ROOT': self.root / 'reports'}
        )
        override.enable()
        self.addCleanup(override.disable)
