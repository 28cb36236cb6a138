# incremental_app/datasets.py
"""Conjuntos de datos en el espacio de características.

El extractor F está congelado y fuera de este sistema: las características se
leen de archivos precalculados o se generan sintéticamente (blobs gaussianos).
"""
import csv
import hashlib
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .numerics import rng_shuffle

logger = logging.getLogger(__name__)

ORIGINS = ('train', 'val', 'test')
FEATURE_HEADER = 'label,h,w,d'


class DatasetError(ValueError):
    """Error de construcción o partición de un dataset"""
    pass


class FeatureFileError(DatasetError):
    """Archivo de características mal formado; indica la línea"""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"línea {line_number}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class LabeledExample:
    features: np.ndarray  # H x W x D
    label: int
    origin: str = 'train'


class Dataset:
    """Lista ordenada de ejemplos con una única forma de características.

    Internamente guarda un arreglo N x H x W x D y un vector de etiquetas; los
    arreglos quedan de solo lectura tras la construcción.
    """

    def __init__(self, features, labels, origin='train', feature_shape=None):
        if origin not in ORIGINS:
            raise DatasetError(f"Origen desconocido: {origin}")
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if features.ndim != 4:
            if features.size == 0 and feature_shape is not None:
                features = features.reshape((0,) + tuple(feature_shape))
            else:
                raise DatasetError(f"Se esperaban características N x H x W x D, forma {features.shape}")
        if len(features) != len(labels):
            raise DatasetError(f"{len(features)} características para {len(labels)} etiquetas")
        if feature_shape is not None and tuple(features.shape[1:]) != tuple(feature_shape):
            raise DatasetError(f"Forma {features.shape[1:]} distinta de la declarada {tuple(feature_shape)}")
        if labels.size and labels.min() < 0:
            raise DatasetError("Las etiquetas deben ser enteros no negativos")
        if not np.all(np.isfinite(features)):
            raise DatasetError("Características no finitas")
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self.labels = labels
        self.origin = origin

    @classmethod
    def from_examples(cls, examples, origin=None, feature_shape=None):
        examples = list(examples)
        if not examples:
            if feature_shape is None:
                raise DatasetError("Dataset vacío sin forma declarada")
            return cls(np.zeros((0,) + tuple(feature_shape)), [], origin or 'train')
        shape = examples[0].features.shape
        for ex in examples:
            if ex.features.shape != shape:
                raise DatasetError(f"Formas mezcladas: {ex.features.shape} vs {shape}")
        return cls(
            np.stack([ex.features for ex in examples]),
            [ex.label for ex in examples],
            origin or examples[0].origin,
        )

    @classmethod
    def concat(cls, datasets, origin=None):
        datasets = [d for d in datasets if d is not None]
        if not datasets:
            raise DatasetError("Nada que concatenar")
        shape = datasets[0].feature_shape
        for d in datasets:
            if d.feature_shape != shape:
                raise DatasetError(f"Formas mezcladas: {d.feature_shape} vs {shape}")
        return cls(
            np.concatenate([d.features for d in datasets]),
            np.concatenate([d.labels for d in datasets]),
            origin or datasets[0].origin,
            feature_shape=shape,
        )

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, index):
        return LabeledExample(self.features[index], int(self.labels[index]), self.origin)

    @property
    def examples(self):
        return [self[i] for i in range(len(self))]

    @property
    def feature_shape(self):
        return tuple(self.features.shape[1:])

    @property
    def class_set(self):
        return set(int(c) for c in np.unique(self.labels))

    def subset(self, indices, origin=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[indices], self.labels[indices], origin or self.origin,
            feature_shape=self.feature_shape,
        )

    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(repr(self.feature_shape).encode())
        digest.update(np.ascontiguousarray(self.labels).tobytes())
        digest.update(np.ascontiguousarray(self.features).tobytes())
        return digest.hexdigest()


@dataclass
class Session:
    train: Dataset
    val: Dataset
    test: Dataset
    class_ids: list


@dataclass
class SessionStream:
    sessions: list
    class_order: list

    def fingerprint(self):
        """Huella del flujo: orden de clases y contenido de cada sesión"""
        digest = hashlib.sha256()
        digest.update(",".join(str(c) for c in self.class_order).encode())
        for s in self.sessions:
            for part in (s.train, s.val, s.test):
                digest.update(part.fingerprint().encode())
        return digest.hexdigest()


# --- PARTICIÓN EN SESIONES ---
def validation_count(n_class, val_fraction):
    """Ejemplos de validación para una clase: redondeo de val_fraction · n,
    con al menos uno de cada lado cuando la clase tiene dos o más ejemplos"""
    n_val = int(math.floor(val_fraction * n_class + 0.5))
    if n_class >= 2:
        n_val = min(max(n_val, 1), n_class - 1)
    else:
        n_val = 0
    return n_val


def split_into_groups(dataset, test_set, num_splits, val_fraction=0.10, rng=None):
    """Divide las clases en num_splits sesiones disjuntas.

    El orden de clases es la primera extracción del generador, así que sólo
    depende de (semilla, número de clases) y no de num_splits.
    """
    if rng is None:
        raise DatasetError("split_into_groups necesita un generador")
    if not 0.0 < val_fraction < 1.0:
        raise DatasetError(f"val_fraction debe estar en (0, 1), recibió {val_fraction}")
    if num_splits < 1:
        raise DatasetError(f"num_splits debe ser >= 1, recibió {num_splits}")

    class_ids = sorted(dataset.class_set)
    if not class_ids:
        raise DatasetError("El dataset de entrenamiento no tiene clases")
    if len(class_ids) % num_splits != 0:
        raise DatasetError(
            f"{len(class_ids)} clases no se dividen en {num_splits} sesiones iguales"
        )
    missing = set(class_ids) - test_set.class_set
    if missing:
        raise DatasetError(f"Clases sin ejemplos de prueba: {sorted(missing)}")
    extra = test_set.class_set - set(class_ids)
    if extra:
        raise DatasetError(f"Clases de prueba sin ejemplos de entrenamiento: {sorted(extra)}")

    perm = rng_shuffle(rng, len(class_ids))
    class_order = [class_ids[i] for i in perm]
    group = len(class_ids) // num_splits
    logger.info(f"Orden de clases: {class_order} ({num_splits} sesiones de {group})")

    # Partición estratificada train/val por clase, en orden de id
    train_idx, val_idx = {}, {}
    for c in class_ids:
        members = np.flatnonzero(dataset.labels == c)
        if members.size == 0:
            raise DatasetError(f"Clase vacía: {c}")
        n_val = validation_count(members.size, val_fraction)
        order = rng_shuffle(rng, members.size)
        chosen = set(order[:n_val])
        val_idx[c] = [int(members[i]) for i in range(members.size) if i in chosen]
        train_idx[c] = [int(members[i]) for i in range(members.size) if i not in chosen]

    sessions = []
    for i in range(num_splits):
        ids = class_order[i * group:(i + 1) * group]
        own = set(ids)
        tr = sorted(j for c in ids for j in train_idx[c])
        va = sorted(j for c in ids for j in val_idx[c])
        te = [j for j in range(len(test_set)) if int(test_set.labels[j]) in own]
        sessions.append(Session(
            train=dataset.subset(tr, 'train'),
            val=dataset.subset(va, 'val'),
            test=test_set.subset(te, 'test'),
            class_ids=list(ids),
        ))
    return SessionStream(sessions=sessions, class_order=class_order)


# --- DATOS SINTÉTICOS ---
def gen_gaussian_blobs(num_classes, dim, n_train_per_class, n_test_per_class, separation, rng):
    """Blobs gaussianos: medias uniformes en la esfera de radio `separation`,
    ejemplos = media + ruido normal unitario, forma 1 x 1 x dim"""
    if dim < 2:
        raise DatasetError(f"dim debe ser >= 2, recibió {dim}")
    if not separation > 0:
        raise DatasetError(f"separation debe ser > 0, recibió {separation}")
    if num_classes < 1 or n_train_per_class < 1 or n_test_per_class < 1:
        raise DatasetError("num_classes y los tamaños por clase deben ser >= 1")

    means = []
    for _ in range(num_classes):
        direction = rng.normal_array((dim,))
        norm = float(np.linalg.norm(direction))
        while norm == 0.0:
            direction = rng.normal_array((dim,))
            norm = float(np.linalg.norm(direction))
        means.append(direction / norm * separation)

    def draw(n_per_class, origin):
        feats, labels = [], []
        for c in range(num_classes):
            noise = rng.normal_array((n_per_class, dim))
            feats.append(means[c] + noise)
            labels.extend([c] * n_per_class)
        X = np.concatenate(feats).reshape(-1, 1, 1, dim)
        return Dataset(X, labels, origin)

    train = draw(n_train_per_class, 'train')
    test = draw(n_test_per_class, 'test')
    logger.info(f"Blobs generados: {num_classes} clases, dim={dim}, {len(train)} train / {len(test)} test")
    return train, test


# --- ARCHIVOS DE CARACTERÍSTICAS ---
LABEL_PATTERN = re.compile(r'[+-]?\d+')
NUMBER_PATTERN = re.compile(r'[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?')
OVERFLOW_MARK = '#overflow:'
FIRST_DATA_LINE = 3


def save_feature_file(dataset, path):
    """Escribe el CSV de características con decimales de ida y vuelta"""
    path = Path(path)
    h, w, d = dataset.feature_shape
    frame = pd.DataFrame(dataset.features.reshape(len(dataset), h * w * d))
    frame.insert(0, 'label', dataset.labels.astype(np.int64))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(f"{FEATURE_HEADER}\n#shape,{h},{w},{d}\n")
        frame.to_csv(handle, header=False, index=False, lineterminator='\n')
    logger.debug(f"Archivo de características guardado: {path} ({len(dataset)} filas)")
    return path


def _read_shape(path):
    with open(path, 'r', encoding='utf-8') as handle:
        header = handle.readline().rstrip('\r\n')
        shape_line = handle.readline()
    if header.strip() != FEATURE_HEADER:
        raise FeatureFileError(f"encabezado inválido, se esperaba '{FEATURE_HEADER}'", 1)
    if not shape_line:
        raise FeatureFileError("falta la línea '#shape,<H>,<W>,<D>'", 2)
    fields = shape_line.strip().split(',')
    if len(fields) != 4 or fields[0] != '#shape':
        raise FeatureFileError("línea de forma inválida, se esperaba '#shape,<H>,<W>,<D>'", 2)
    if not all(LABEL_PATTERN.fullmatch(v) for v in fields[1:]):
        raise FeatureFileError("dimensiones no numéricas en la línea de forma", 2)
    shape = tuple(int(v) for v in fields[1:])
    if any(v <= 0 for v in shape):
        raise FeatureFileError(f"dimensiones no positivas: {shape}", 2)
    return shape


def _read_rows(path, width):
    """Filas de datos como texto, una por línea del archivo.

    Las filas con campos de más llegan como una marca con su cuenta para no
    perder la numeración de líneas; las cortas quedan rellenas con NaN.
    """
    def overflow(fields):
        return [f"{OVERFLOW_MARK}{len(fields) - 1}"] + [''] * width

    try:
        frame = pd.read_csv(
            path, skiprows=2, header=None, names=list(range(width + 1)), dtype=str,
            keep_default_na=False, skip_blank_lines=False, quoting=csv.QUOTE_NONE,
            engine='python', on_bad_lines=overflow, encoding='utf-8',
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(range(width + 1)), dtype=object)
    if not isinstance(frame.index, pd.RangeIndex):
        # una primera fila con campos de más se toma como índice implícito
        raise FeatureFileError(f"fila con más de {width} características", FIRST_DATA_LINE)
    return frame


def _describe_row(row, width):
    fields = [v for v in row if isinstance(v, str)]
    head = fields[0] if fields else ''
    if head.startswith(OVERFLOW_MARK):
        return f"fila con {head[len(OVERFLOW_MARK):]} características, se esperaban {width}"
    if not any(fields):
        return "línea vacía"
    if len(fields) != width + 1:
        return f"fila con {len(fields) - 1} características, se esperaban {width}"
    if not LABEL_PATTERN.fullmatch(head):
        return f"etiqueta no entera: {head!r}"
    bad = next(v for v in fields[1:] if not NUMBER_PATTERN.fullmatch(v))
    return f"campo no numérico: {bad!r}"


def load_feature_file(path, origin='train'):
    """Lee el CSV de características; los errores indican el número de línea"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Archivo de características no encontrado: {path}")

    shape = _read_shape(path)
    width = shape[0] * shape[1] * shape[2]
    frame = _read_rows(path, width)

    labels_ok = frame[0].map(lambda v: isinstance(v, str) and LABEL_PATTERN.fullmatch(v) is not None)
    values_ok = frame.iloc[:, 1:].map(
        lambda v: isinstance(v, str) and NUMBER_PATTERN.fullmatch(v) is not None
    ).all(axis=1)
    bad = np.flatnonzero(~(labels_ok & values_ok).to_numpy(dtype=bool))
    if bad.size:
        first = int(bad[0])
        raise FeatureFileError(_describe_row(frame.iloc[first], width), first + FIRST_DATA_LINE)

    labels = frame[0].astype(np.int64).to_numpy()
    values = frame.iloc[:, 1:].astype(np.float64).to_numpy()
    for name, rows in (("etiqueta negativa", np.flatnonzero(labels < 0)),
                       ("valor no finito", np.flatnonzero(~np.isfinite(values).all(axis=1)))):
        if rows.size:
            raise FeatureFileError(name, int(rows[0]) + FIRST_DATA_LINE)

    features = values.reshape((len(frame),) + shape)
    logger.info(f"Archivo de características cargado: {path} ({len(frame)} filas, forma {shape})")
    return Dataset(features, labels, origin, feature_shape=shape)
