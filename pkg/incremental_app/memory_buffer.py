# incremental_app/memory_buffer.py
"""Memoria de repetición de capacidad B con balanceo greedy por clase.

Dos particiones disjuntas: 'train' sólo recibe ejemplos de entrenamiento y
'val' sólo ejemplos de validación. La validación ocupa round(0.10 · B) lugares
por defecto.
"""
import logging
import math
from collections import defaultdict

import numpy as np

from .datasets import Dataset

logger = logging.getLogger(__name__)

PARTITIONS = ('train', 'val')


class ReplayBufferError(ValueError):
    """Operación inválida sobre la memoria de repetición"""
    pass


def quotas_for(capacity, class_ids):
    """Cupo por clase: capacity // clases, el resto va a los ids más chicos"""
    class_ids = sorted(class_ids)
    if not class_ids:
        return {}
    base, remainder = divmod(capacity, len(class_ids))
    return {c: base + (1 if i < remainder else 0) for i, c in enumerate(class_ids)}


class ReplayBuffer:

    def __init__(self, capacity, val_fraction=0.10, val_capacity=None, feature_shape=None):
        if capacity < 0:
            raise ReplayBufferError(f"Capacidad negativa: {capacity}")
        if val_capacity is None:
            val_capacity = int(math.floor(val_fraction * capacity + 0.5))
        if not 0 <= val_capacity <= capacity:
            raise ReplayBufferError(f"val_capacity {val_capacity} fuera de [0, {capacity}]")
        self.capacity = int(capacity)
        self.val_capacity = int(val_capacity)
        self.feature_shape = tuple(feature_shape) if feature_shape is not None else None
        self._parts = {'train': [], 'val': []}
        self._seen = {'train': set(), 'val': set()}

    def partition_capacity(self, partition):
        self._check_partition(partition)
        if partition == 'val':
            return self.val_capacity
        return self.capacity - self.val_capacity

    def examples(self, partition):
        self._check_partition(partition)
        return list(self._parts[partition])

    def size(self, partition):
        self._check_partition(partition)
        return len(self._parts[partition])

    def __len__(self):
        return len(self._parts['train']) + len(self._parts['val'])

    def class_counts(self, partition):
        """Histograma exacto clase → cantidad de la partición"""
        self._check_partition(partition)
        counts = defaultdict(int)
        for ex in self._parts[partition]:
            counts[ex.label] += 1
        return dict(sorted(counts.items()))

    def as_dataset(self, partition):
        """La partición como Dataset (None si está vacía y no hay forma)"""
        items = self._parts[partition]
        if not items:
            if self.feature_shape is None:
                return None
            return Dataset(np.zeros((0,) + self.feature_shape), [], partition,
                           feature_shape=self.feature_shape)
        return Dataset.from_examples(items, origin=partition)

    # --- ACTUALIZACIÓN GREEDY ---
    def update(self, partition, new_examples, rng):
        """Balancea la partición con los ejemplos nuevos.

        Las clases por encima de su cupo pierden ejemplos elegidos al azar; los
        candidatos de clases por debajo del cupo entran por muestreo sin
        reemplazo hasta llenarlo.
        """
        self._check_partition(partition)
        new_examples = list(new_examples)
        if not new_examples:
            return

        for ex in new_examples:
            if self.feature_shape is None:
                self.feature_shape = tuple(ex.features.shape)
            if tuple(ex.features.shape) != self.feature_shape:
                raise ReplayBufferError(
                    f"Forma {tuple(ex.features.shape)} distinta de la memoria {self.feature_shape}"
                )
            if ex.origin != partition:
                raise ReplayBufferError(
                    f"Ejemplo de origen '{ex.origin}' no puede entrar en la partición '{partition}'"
                )

        capacity = self.partition_capacity(partition)
        incoming = defaultdict(list)
        for ex in new_examples:
            incoming[ex.label].append(ex)
        stored = defaultdict(list)
        for ex in self._parts[partition]:
            stored[ex.label].append(ex)

        seen = self._seen[partition]
        seen.update(incoming.keys())
        quotas = quotas_for(capacity, seen)

        evicted = 0
        for c in sorted(seen):
            items = stored.get(c, [])
            excess = len(items) - quotas[c]
            if excess > 0:
                drop = set(rng.sample(len(items), excess))
                stored[c] = [ex for i, ex in enumerate(items) if i not in drop]
                evicted += excess

        admitted = 0
        for c in sorted(seen):
            room = quotas[c] - len(stored.get(c, []))
            candidates = incoming.get(c, [])
            if room > 0 and candidates:
                picks = rng.sample(len(candidates), min(room, len(candidates)))
                stored[c].extend(candidates[i] for i in sorted(picks))
                admitted += len(picks)

        self._parts[partition] = [ex for c in sorted(seen) for ex in stored.get(c, [])]
        logger.debug(
            f"Memoria '{partition}': {admitted} admitidos, {evicted} desalojados, "
            f"{len(self._parts[partition])}/{capacity} ocupados"
        )

    # --- MUESTREO ---
    def sample_batch(self, partition, k, rng):
        """k ejemplos uniformes; sin reemplazo si alcanza, si no con reemplazo"""
        self._check_partition(partition)
        if k < 0:
            raise ReplayBufferError(f"k debe ser >= 0, recibió {k}")
        if k == 0:
            return []
        items = self._parts[partition]
        if not items:
            raise ReplayBufferError(f"No se puede muestrear {k} de la partición '{partition}' vacía")
        if k <= len(items):
            indices = rng.sample(len(items), k)
        else:
            logger.debug(f"Sobremuestreo de '{partition}': {k} pedidos, {len(items)} disponibles")
            indices = rng.choices(len(items), k)
        return [items[i] for i in indices]

    def _check_partition(self, partition):
        if partition not in PARTITIONS:
            raise ReplayBufferError(f"Partición desconocida: {partition}")
