# incremental_app/classifier_bank.py
"""Banco de clasificadores parciales sobre un espacio de características fijo.

Cada sesión agrega una cabeza (convolución 1x1 → promedio espacial → densa)
con salidas sólo para sus clases. La capa final concatena las salidas de todas
las cabezas y aplica softmax; el gradiente de la pérdida llega únicamente a las
cabezas no congeladas (en el método normal, sólo la última).
"""
import abc
import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import mean_cross_entropy, one_hot, softmax_rows

logger = logging.getLogger(__name__)

PARAM_NAMES = ('W_proj', 'b_proj', 'W_out', 'b_out')


class ClassifierBankError(ValueError):
    """Operación inválida sobre el banco de clasificadores"""
    pass


def glorot_uniform(rng, fan_in, fan_out):
    """Matriz fan_in x fan_out ~ U(-s, s), s = sqrt(6 / (fan_in + fan_out))"""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_array((fan_in, fan_out), -limit, limit)


@dataclass(eq=False)
class PartialClassifier:
    W_proj: np.ndarray  # D x K
    b_proj: np.ndarray  # K
    W_out: np.ndarray   # K x m
    b_out: np.ndarray   # m
    class_ids: list
    frozen: bool = False
    use_activation: bool = True

    @classmethod
    def initialize(cls, depth, width, class_ids, rng, use_activation=True):
        """Pesos Glorot uniformes (primero W_proj, luego W_out), sesgos en cero"""
        class_ids = [int(c) for c in class_ids]
        if not class_ids:
            raise ClassifierBankError("Una cabeza necesita al menos una clase")
        if depth < 1 or width < 1:
            raise ClassifierBankError(f"Dimensiones inválidas: D={depth}, K={width}")
        W_proj = glorot_uniform(rng, depth, width)
        W_out = glorot_uniform(rng, width, len(class_ids))
        return cls(
            W_proj=W_proj, b_proj=np.zeros(width),
            W_out=W_out, b_out=np.zeros(len(class_ids)),
            class_ids=class_ids, use_activation=use_activation,
        )

    @property
    def depth(self):
        return self.W_proj.shape[0]

    @property
    def width(self):
        return self.W_proj.shape[1]

    @property
    def num_outputs(self):
        return len(self.class_ids)

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def param_count(self):
        return int(sum(p.size for p in self.params().values()))

    def to_dict(self, include_state=True):
        payload = {
            'class_ids': list(self.class_ids),
            'use_activation': self.use_activation,
            'shapes': {name: list(p.shape) for name, p in self.params().items()},
        }
        for name, p in self.params().items():
            payload[name] = p.reshape(-1).tolist()
        if include_state:
            payload['frozen'] = self.frozen
        return payload

    @classmethod
    def from_dict(cls, payload):
        arrays = {
            name: np.array(payload[name], dtype=np.float64).reshape(payload['shapes'][name])
            for name in PARAM_NAMES
        }
        return cls(
            class_ids=[int(c) for c in payload['class_ids']],
            frozen=bool(payload.get('frozen', False)),
            use_activation=bool(payload.get('use_activation', True)),
            **arrays,
        )

    def parameter_bytes(self):
        """JSON canónico de los pesos (sin el estado de congelamiento)"""
        return json.dumps(self.to_dict(include_state=False), sort_keys=True,
                          separators=(',', ':')).encode('utf-8')

    def checksum(self):
        return hashlib.sha256(self.parameter_bytes()).hexdigest()


@dataclass
class BiCLayer:
    alpha: float = 1.0
    beta: float = 0.0
    new_class_ids: frozenset = field(default_factory=frozenset)

    def to_dict(self):
        return {'alpha': self.alpha, 'beta': self.beta,
                'new_class_ids': sorted(self.new_class_ids)}

    @classmethod
    def from_dict(cls, payload):
        return cls(float(payload['alpha']), float(payload['beta']),
                   frozenset(int(c) for c in payload['new_class_ids']))


# --- PROPAGACIÓN ---
def _positions(features, depth):
    """(H, W, D) o (N, H, W, D) → (N, P, D) con P = H·W"""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ClassifierBankError(f"Se esperaban características H x W x D, forma {X.shape}")
    if X.shape[-1] != depth:
        raise ClassifierBankError(f"Profundidad {X.shape[-1]} distinta de la cabeza ({depth})")
    n, h, w, d = X.shape
    return X.reshape(n, h * w, d)


def _head_forward_cache(clf, X):
    Z = X @ clf.W_proj + clf.b_proj
    A = np.maximum(Z, 0.0) if clf.use_activation else Z
    pooled = A.mean(axis=1)
    logits = pooled @ clf.W_out + clf.b_out
    return logits, (X, Z, pooled)


def _head_backward(clf, cache, G):
    """Gradientes de la cabeza dado G = ∂L/∂logits de su porción (N x m)"""
    X, Z, pooled = cache
    n, p, d = X.shape
    dW_out = pooled.T @ G
    db_out = G.sum(axis=0)
    d_pooled = G @ clf.W_out.T
    dZ = np.repeat(d_pooled[:, None, :] / p, p, axis=1)
    if clf.use_activation:
        dZ = dZ * (Z > 0.0)
    dW_proj = X.reshape(n * p, d).T @ dZ.reshape(n * p, -1)
    db_proj = dZ.sum(axis=(0, 1))
    return {'W_proj': dW_proj, 'b_proj': db_proj, 'W_out': dW_out, 'b_out': db_out}


def head_forward(clf, features):
    """Logits de una cabeza: vector m para un ejemplo, N x m para un lote"""
    single = np.ndim(features) == 3
    logits, _ = _head_forward_cache(clf, _positions(features, clf.depth))
    return logits[0] if single else logits


def apply_bic(logits, bic, class_ids):
    """q_k = α·o_k + β para k nueva, o_k en otro caso (las demás quedan intactas)"""
    out = np.array(logits, dtype=np.float64, copy=True)
    if bic is None or not bic.new_class_ids:
        return out
    mask = np.isin(np.asarray(class_ids, dtype=np.int64), list(bic.new_class_ids))
    out[..., mask] = bic.alpha * out[..., mask] + bic.beta
    return out


def argmax_smallest_id(logits, class_ids):
    """Índice de clase ganador; empates al id global más chico"""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    order = np.argsort(class_ids, kind='stable')
    logits = np.atleast_2d(logits)
    winners = np.argmax(logits[:, order], axis=1)
    return class_ids[order][winners]


class HeadStack(abc.ABC):
    """Base común del banco y del modelo de cabeza única: un conjunto ordenado
    de cabezas cuyas salidas se concatenan antes del softmax.

    `bic` corrige al grupo más reciente. `frozen_bic` guarda las correcciones
    de los grupos cuya cabeza ya se congeló: como la cabeza no vuelve a
    cambiar, su corrección sigue valiendo y se aplica siempre, también en la
    pérdida de entrenamiento de las cabezas siguientes.
    """

    def __init__(self, depth, use_activation=True):
        self.depth = int(depth)
        self.use_activation = use_activation
        self.heads = []
        self.bic = None
        self.frozen_bic = []

    @property
    def class_ids(self):
        return [c for h in self.heads for c in h.class_ids]

    @property
    def class_offsets(self):
        offsets = [0]
        for h in self.heads:
            offsets.append(offsets[-1] + h.num_outputs)
        return offsets

    @property
    def num_classes(self):
        return self.class_offsets[-1]

    @property
    @abc.abstractmethod
    def session_groups(self):
        """Clases de cada sesión, en orden"""

    def trainable_indices(self):
        return [i for i, h in enumerate(self.heads) if not h.frozen]

    def positions_of(self, labels):
        lookup = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([lookup[int(y)] for y in labels], dtype=np.int64)
        except KeyError as e:
            raise ClassifierBankError(f"Clase {e.args[0]} fuera de las {self.num_classes} conocidas")

    # --- propagación ---
    def _forward(self, features):
        if not self.heads:
            raise ClassifierBankError("El banco no tiene cabezas")
        X = _positions(features, self.depth)
        outputs, caches = [], []
        for h in self.heads:
            logits, cache = _head_forward_cache(h, X)
            outputs.append(logits)
            caches.append(cache)
        return np.concatenate(outputs, axis=1), caches

    def forward(self, features):
        """Logits concatenados crudos (sin softmax ni BiC)"""
        single = np.ndim(features) == 3
        logits, _ = self._forward(features)
        return logits[0] if single else logits

    def _with_frozen_bic(self, logits):
        for layer in self.frozen_bic:
            logits = apply_bic(logits, layer, self.class_ids)
        return logits

    def output_logits(self, features, use_bic=True):
        """Logits con las correcciones congeladas y, si use_bic, la del último grupo"""
        logits = self._with_frozen_bic(self.forward(features))
        if use_bic and self.bic is not None:
            logits = apply_bic(logits, self.bic, self.class_ids)
        return logits

    def predict(self, features, use_bic=True):
        single = np.ndim(features) == 3
        logits = self.output_logits(features, use_bic)
        labels = argmax_smallest_id(logits, self.class_ids)
        return int(labels[0]) if single else labels

    def mean_loss(self, features, labels, use_bic=False):
        logits = self.output_logits(np.asarray(features), use_bic)
        return mean_cross_entropy(softmax_rows(logits), self.positions_of(labels))

    def settle_bic(self, keep):
        """Al empezar una sesión: la corrección vigente pasa a `frozen_bic` si
        su cabeza acaba de congelarse (keep) y se descarta si no"""
        if keep and self.bic is not None and self.bic.new_class_ids:
            self.frozen_bic.append(self.bic)
        self.bic = None

    # --- entrenamiento ---
    def loss_and_grads(self, features, labels):
        """Pérdida media y gradientes de las cabezas no congeladas.

        La derivada softmax-CE (p − t)/N se recorta a la porción de cada cabeza
        entrenable y se propaga por la densa, el promedio y la proyección.
        """
        trainable = self.trainable_indices()
        if not trainable:
            raise ClassifierBankError("Todas las cabezas están congeladas")
        logits, caches = self._forward(features)
        # Las correcciones congeladas sólo tocan salidas de cabezas congeladas
        logits = self._with_frozen_bic(logits)
        targets = self.positions_of(labels)
        probs = softmax_rows(logits)
        loss = mean_cross_entropy(probs, targets)
        G = (probs - one_hot(targets, probs.shape[1])) / len(targets)
        offsets = self.class_offsets
        grads = {}
        for i in trainable:
            G_head = G[:, offsets[i]:offsets[i + 1]]
            grads[i] = _head_backward(self.heads[i], caches[i], G_head)
        return loss, grads

    def apply_gradients(self, grads, lr):
        """Paso SGD θ ← θ − lr·g sobre las cabezas con gradiente"""
        for i, head_grads in grads.items():
            head = self.heads[i]
            if head.frozen:
                raise ClassifierBankError(f"La cabeza {i} está congelada")
            for name, g in head_grads.items():
                param = getattr(head, name)
                param -= lr * g

    def snapshot(self):
        return {i: copy.deepcopy(self.heads[i].params()) for i in self.trainable_indices()}

    def restore(self, state):
        for i, params in state.items():
            for name, value in params.items():
                getattr(self.heads[i], name)[...] = value

    def count_trainable_params(self):
        return int(sum(h.param_count() for h in self.heads if not h.frozen))

    def total_params(self):
        return int(sum(h.param_count() for h in self.heads))

    def checksums(self):
        return [h.checksum() for h in self.heads]

    def to_dict(self):
        return {
            'kind': type(self).__name__,
            'depth': self.depth,
            'use_activation': self.use_activation,
            'heads': [h.to_dict() for h in self.heads],
            'bic': self.bic.to_dict() if self.bic is not None else None,
            'frozen_bic': [layer.to_dict() for layer in self.frozen_bic],
        }

    def _load_state(self, payload):
        self.heads = [PartialClassifier.from_dict(h) for h in payload['heads']]
        if payload.get('bic'):
            self.bic = BiCLayer.from_dict(payload['bic'])
        self.frozen_bic = [BiCLayer.from_dict(layer) for layer in payload.get('frozen_bic', [])]
        return self


class ClassifierBank(HeadStack):
    """Secuencia de clasificadores parciales; sólo la última cabeza entrena"""

    @property
    def session_groups(self):
        return [list(h.class_ids) for h in self.heads]

    @classmethod
    def from_dict(cls, payload):
        return cls(payload['depth'], payload.get('use_activation', True))._load_state(payload)


# --- OPERACIONES DEL BANCO ---
def bank_forward(bank, features):
    return bank.forward(features)


def loss_and_grads(bank, batch):
    """batch: lista de (características, clase) o un par (X, y)"""
    features, labels = _unpack_batch(batch)
    return bank.loss_and_grads(features, labels)


def add_classifier(bank, class_ids, width, rng, freeze_previous=True):
    """Congela la cabeza anterior y agrega una nueva para class_ids"""
    overlap = set(int(c) for c in class_ids) & set(bank.class_ids)
    if overlap:
        raise ClassifierBankError(f"Clases ya presentes en el banco: {sorted(overlap)}")
    if len(set(class_ids)) != len(class_ids):
        raise ClassifierBankError(f"Clases repetidas: {list(class_ids)}")
    if bank.heads:
        if freeze_previous:
            bank.heads[-1].frozen = True
        bank.settle_bic(keep=freeze_previous)
    head = PartialClassifier.initialize(bank.depth, width, class_ids, rng, bank.use_activation)
    bank.heads.append(head)
    logger.debug(
        f"Cabeza {len(bank.heads) - 1} agregada: {head.num_outputs} clases, K={width}, "
        f"{head.param_count()} parámetros"
    )
    return head


def predict(bank, features, use_bic=True):
    return bank.predict(features, use_bic=use_bic)


# --- FORMAS POR LOTE ---
def _as_batch(batch):
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 4:
        raise ClassifierBankError(f"Se esperaba un lote N x H x W x D, forma {X.shape}")
    return X


def head_forward_batch(clf, batch):
    return head_forward(clf, _as_batch(batch))


def bank_forward_batch(bank, batch):
    return bank.forward(_as_batch(batch))


def predict_batch(bank, batch, use_bic=True):
    return bank.predict(_as_batch(batch), use_bic=use_bic)


def head_bytes(bank, k):
    """Bytes canónicos de los pesos de la cabeza k"""
    if not 0 <= k < len(bank.heads):
        raise ClassifierBankError(f"Cabeza {k} inexistente ({len(bank.heads)} cabezas)")
    return bank.heads[k].parameter_bytes()


def total_params(model):
    return model.total_params()


def count_trainable_params(model):
    return model.count_trainable_params()


def parity_hidden_width(depth, num_classes, num_splits, head_width):
    """Ancho mínimo de una cabeza única con tantos parámetros como la suma de
    las cabezas parciales (num_splits cabezas de ancho head_width)"""
    ours = num_splits * (depth * head_width + head_width) + head_width * num_classes + num_classes
    per_unit = depth + 1 + num_classes
    return max(1, math.ceil((ours - num_classes) / per_unit))


def save_bank(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n", encoding='utf-8')
    return path


def load_bank(path):
    """Reconstruye el modelo guardado según su 'kind' (banco o cabeza única)"""
    from .baselines import SingleHeadModel

    payload = json.loads(Path(path).read_text(encoding='utf-8'))
    kinds = {cls.__name__: cls for cls in (ClassifierBank, SingleHeadModel)}
    kind = payload.get('kind', ClassifierBank.__name__)
    if kind not in kinds:
        raise ClassifierBankError(f"Tipo de modelo desconocido: {kind}")
    return kinds[kind].from_dict(payload)


def _unpack_batch(batch):
    if hasattr(batch, 'features') and hasattr(batch, 'labels'):
        return batch.features, batch.labels
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) \
            and np.ndim(batch[0]) == 4:
        return batch
    pairs = list(batch)
    if not pairs:
        raise ClassifierBankError("Lote vacío")
    return np.stack([np.asarray(x, dtype=np.float64) for x, _ in pairs]), [int(y) for _, y in pairs]
