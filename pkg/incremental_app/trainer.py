# incremental_app/trainer.py
"""Una sesión de entrenamiento del método de clasificadores parciales:
agregar cabeza, SGD con lotes mitad actuales / mitad memoria, decaimiento del
learning rate en meseta, parada temprana por pérdida de validación,
actualización de la memoria y ajuste de BiC."""
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier_bank import BiCLayer, add_classifier
from .datasets import Dataset
from .numerics import mean_cross_entropy, one_hot, rng_shuffle, softmax_rows

logger = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-12
LR_SCHEDULES = ('plateau', 'exponential')


class TrainingError(ValueError):
    """Error de configuración o de precondición de una sesión"""
    pass


@dataclass
class SessionConfig:
    lr0: float = 0.01
    stop_patience: int = 10
    lr_patience: int = 3
    lr_decay_factor: float = 0.1
    batch_size: int = 32
    max_epochs: int = 200
    hidden_width: int = 8
    val_fraction: float = 0.10
    bic_epochs: int = 100
    bic_lr: float = 0.001
    lr_schedule: str = 'plateau'
    exp_decay_rate: float = 0.95
    use_activation: bool = True

    def __post_init__(self):
        if not self.lr0 > 0:
            raise TrainingError(f"lr0 debe ser > 0, recibió {self.lr0}")
        if not 0 < self.lr_decay_factor < 1:
            raise TrainingError(f"lr_decay_factor debe estar en (0, 1), recibió {self.lr_decay_factor}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise TrainingError(f"batch_size debe ser par y >= 2, recibió {self.batch_size}")
        if self.stop_patience < 1 or self.lr_patience < 1:
            raise TrainingError("Las paciencias deben ser >= 1")
        if self.max_epochs < 1 or self.hidden_width < 1:
            raise TrainingError("max_epochs y hidden_width deben ser >= 1")
        if not 0 < self.val_fraction < 1:
            raise TrainingError(f"val_fraction debe estar en (0, 1), recibió {self.val_fraction}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise TrainingError(f"lr_schedule desconocido: {self.lr_schedule}")
        if not 0 < self.exp_decay_rate <= 1:
            raise TrainingError(f"exp_decay_rate debe estar en (0, 1], recibió {self.exp_decay_rate}")
        if self.bic_epochs < 0 or not self.bic_lr > 0:
            raise TrainingError("bic_epochs debe ser >= 0 y bic_lr > 0")

    @classmethod
    def from_settings(cls, **overrides):
        """Valores por defecto de settings.CONTINUAL_LEARNING más overrides"""
        from django.conf import settings

        values = {}
        if settings.configured:
            conf = getattr(settings, 'CONTINUAL_LEARNING', {})
            mapping = {
                'DEFAULT_LR': 'lr0',
                'DEFAULT_BATCH_SIZE': 'batch_size',
                'DEFAULT_MAX_EPOCHS': 'max_epochs',
                'DEFAULT_STOP_PATIENCE': 'stop_patience',
                'DEFAULT_LR_PATIENCE': 'lr_patience',
                'DEFAULT_HIDDEN_WIDTH': 'hidden_width',
                'DEFAULT_BIC_EPOCHS': 'bic_epochs',
                'DEFAULT_BIC_LR': 'bic_lr',
            }
            for key, name in mapping.items():
                if key in conf:
                    values[name] = conf[key]
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SessionReport:
    epochs_run: int = 0
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    alpha: float = 1.0
    beta: float = 0.0
    wall_time: float = 0.0
    buffer_histogram: dict = field(default_factory=dict)
    trainable_params: int = 0

    def to_dict(self, include_timing=False):
        payload = {
            'epochs_run': self.epochs_run,
            'train_losses': list(self.train_losses),
            'val_losses': list(self.val_losses),
            'lr_history': list(self.lr_history),
            'best_epoch': self.best_epoch,
            'stopped_early': self.stopped_early,
            'alpha': self.alpha,
            'beta': self.beta,
            'buffer_histogram': {
                part: {str(c): n for c, n in counts.items()}
                for part, counts in self.buffer_histogram.items()
            },
            'trainable_params': self.trainable_params,
        }
        if include_timing:
            payload['wall_time'] = self.wall_time
        return payload


@dataclass
class Minibatch:
    features: np.ndarray
    labels: np.ndarray
    sources: list

    def __len__(self):
        return len(self.labels)


# --- LEARNING RATE ---
class PlateauSchedule:
    """Multiplica el lr por `factor` tras `patience` épocas sin mejora"""

    def __init__(self, lr0, patience, factor):
        self.lr0 = lr0
        self.patience = patience
        self.factor = factor
        self.decays = 0
        self.best = math.inf
        self.wait = 0

    @property
    def lr(self):
        return self.lr0 * self.factor ** self.decays

    def step(self, epoch, val_loss):
        if val_loss < self.best - IMPROVEMENT_EPS:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.decays += 1
                self.wait = 0
                logger.debug(f"Meseta en época {epoch}: lr → {self.lr:.3g}")
        return self.lr


class ExponentialSchedule:
    """lr_epoch = lr0 · rate^epoch"""

    def __init__(self, lr0, rate):
        self.lr0 = lr0
        self.rate = rate
        self.epoch = 0

    def lr_at(self, epoch):
        return self.lr0 * self.rate ** epoch

    @property
    def lr(self):
        return self.lr_at(self.epoch)

    def step(self, epoch, val_loss):
        self.epoch = epoch + 1
        return self.lr


def make_schedule(cfg):
    if cfg.lr_schedule == 'plateau':
        return PlateauSchedule(cfg.lr0, cfg.lr_patience, cfg.lr_decay_factor)
    return ExponentialSchedule(cfg.lr0, cfg.exp_decay_rate)


def should_stop(val_losses, patience):
    """True si el mínimo acumulado no mejoró (> 1e-12) en las últimas `patience` épocas"""
    if patience < 1:
        raise TrainingError(f"patience debe ser >= 1, recibió {patience}")
    if len(val_losses) <= patience:
        return False
    best = min(val_losses[:-patience])
    for loss in val_losses[-patience:]:
        if loss < best - IMPROVEMENT_EPS:
            return False
    return True


# --- LOTES ---
def compose_minibatch(current, buffer, batch_size, rng, indices=None):
    """Mitad del lote del dataset actual y mitad de la memoria de entrenamiento.

    Con la memoria vacía (primera sesión) todo el lote sale del dataset actual.
    `indices` fija los ejemplos actuales (recorrido de una época); si no, se
    sortean uniformemente.
    """
    if batch_size < 2 or batch_size % 2:
        raise TrainingError(f"batch_size debe ser par y >= 2, recibió {batch_size}")
    if current is None or len(current) == 0:
        raise TrainingError("El dataset actual está vacío")
    memory_ready = buffer is not None and buffer.size('train') > 0
    if indices is None:
        k = batch_size // 2 if memory_ready else batch_size
        if k <= len(current):
            indices = rng.sample(len(current), k)
        else:
            indices = rng.choices(len(current), k)
    indices = list(indices)

    features = [current.features[i] for i in indices]
    labels = [int(current.labels[i]) for i in indices]
    sources = ['current'] * len(indices)
    if memory_ready:
        for ex in buffer.sample_batch('train', len(indices), rng):
            features.append(ex.features)
            labels.append(ex.label)
            sources.append('memory')

    order = rng_shuffle(rng, len(labels))
    return Minibatch(
        features=np.stack([features[i] for i in order]),
        labels=np.array([labels[i] for i in order], dtype=np.int64),
        sources=[sources[i] for i in order],
    )


def validation_loss(model, dataset):
    return model.mean_loss(dataset.features, dataset.labels)


def merge_validation(*parts):
    parts = [p for p in parts if p is not None and len(p) > 0]
    if not parts:
        return None
    return Dataset.concat(parts, origin='val')


# --- BUCLE DE ÉPOCAS ---
def fit_model(model, current, buffer, val, cfg, rng, report=None):
    """Épocas de SGD sobre las cabezas entrenables del modelo.

    Al final restaura los parámetros de la época con menor pérdida de
    validación. La validación nunca se usa para el gradiente.
    """
    report = report or SessionReport()
    if current is None or len(current) == 0:
        raise TrainingError("No hay ejemplos de entrenamiento")
    schedule = make_schedule(cfg)
    best_loss = math.inf
    best_state = model.snapshot()
    n = len(current)

    for epoch in range(cfg.max_epochs):
        lr = schedule.lr
        memory_ready = buffer is not None and buffer.size('train') > 0
        step = cfg.batch_size // 2 if memory_ready else cfg.batch_size
        order = rng_shuffle(rng, n)
        total, seen = 0.0, 0
        for start in range(0, n, step):
            batch = compose_minibatch(current, buffer, cfg.batch_size, rng,
                                      indices=order[start:start + step])
            loss, grads = model.loss_and_grads(batch.features, batch.labels)
            model.apply_gradients(grads, lr)
            total += loss * len(batch)
            seen += len(batch)
        train_loss = total / seen
        val_loss = validation_loss(model, val) if val is not None else train_loss

        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        report.lr_history.append(lr)
        if val_loss < best_loss - IMPROVEMENT_EPS:
            best_loss = val_loss
            best_state = model.snapshot()
            report.best_epoch = epoch
        logger.debug(f"Época {epoch}: train={train_loss:.5f} val={val_loss:.5f} lr={lr:.3g}")

        if should_stop(report.val_losses, cfg.stop_patience):
            report.stopped_early = True
            break
        schedule.step(epoch, val_loss)

    report.epochs_run = len(report.val_losses)
    model.restore(best_state)
    return report


# --- BiC ---
def bic_loss_and_grads(logits, targets, new_mask, alpha, beta):
    """Pérdida CE con BiC y sus derivadas (∂α, ∂β) promediadas en el lote"""
    logits = np.asarray(logits, dtype=np.float64)
    adjusted = logits.copy()
    adjusted[:, new_mask] = alpha * logits[:, new_mask] + beta
    probs = softmax_rows(adjusted)
    loss = mean_cross_entropy(probs, targets)
    G = (probs - one_hot(targets, probs.shape[1])) / len(targets)
    d_alpha = float(np.sum(G[:, new_mask] * logits[:, new_mask]))
    d_beta = float(np.sum(G[:, new_mask]))
    return loss, d_alpha, d_beta


def fit_bic(model, buffer, cfg):
    """Ajusta α, β sobre la partición de validación de la memoria.

    Descenso de gradiente de lote completo, bic_epochs pasos con bic_lr; sólo
    α y β cambian. Los logits ya llevan las correcciones de los grupos
    congelados. En la primera sesión queda la identidad.
    """
    groups = model.session_groups
    new_ids = frozenset(groups[-1]) if groups else frozenset()
    model.bic = BiCLayer(1.0, 0.0, new_ids)
    if len(groups) < 2:
        logger.info("BiC omitido: una sola sesión vista")
        return 1.0, 0.0

    val = buffer.as_dataset('val')
    if val is None or len(val) == 0:
        raise TrainingError("La memoria de validación está vacía con dos o más grupos de clases")
    covered = sum(1 for g in groups if set(g) & val.class_set)
    if covered < 2:
        logger.warning(f"BiC omitido: la memoria de validación cubre {covered} grupo(s)")
        return 1.0, 0.0

    logits = model.output_logits(val.features, use_bic=False)
    targets = model.positions_of(val.labels)
    new_mask = np.isin(np.asarray(model.class_ids), list(new_ids))
    alpha, beta = 1.0, 0.0
    initial, _, _ = bic_loss_and_grads(logits, targets, new_mask, alpha, beta)
    for _ in range(cfg.bic_epochs):
        _, d_alpha, d_beta = bic_loss_and_grads(logits, targets, new_mask, alpha, beta)
        alpha -= cfg.bic_lr * d_alpha
        beta -= cfg.bic_lr * d_beta
    final, _, _ = bic_loss_and_grads(logits, targets, new_mask, alpha, beta)
    model.bic = BiCLayer(alpha, beta, new_ids)
    logger.info(f"BiC ajustado: α={alpha:.5f} β={beta:.5f} (pérdida {initial:.5f} → {final:.5f})")
    return alpha, beta


# --- SESIÓN DEL MÉTODO ---
def update_memory(buffer, session, rng):
    buffer.update('train', session.train.examples, rng)
    buffer.update('val', session.val.examples, rng)


def buffer_histogram(buffer):
    return {part: buffer.class_counts(part) for part in ('train', 'val')}


def train_session(bank, session, buffer, cfg, rng, freeze_previous=True, use_bic=True):
    """Sesión completa: nueva cabeza, épocas, memoria al final y BiC"""
    started = time.perf_counter()
    if len(session.train) == 0:
        raise TrainingError("La sesión no tiene ejemplos de entrenamiento")
    overlap = set(session.class_ids) & set(bank.class_ids)
    if overlap:
        raise TrainingError(f"Clases ya aprendidas en sesiones previas: {sorted(overlap)}")

    logger.info(f"=== SESIÓN {len(bank.heads)}: clases {list(session.class_ids)} ===")
    add_classifier(bank, session.class_ids, cfg.hidden_width, rng, freeze_previous=freeze_previous)

    report = SessionReport(trainable_params=bank.count_trainable_params())
    val = merge_validation(session.val, buffer.as_dataset('val'))
    fit_model(bank, session.train, buffer, val, cfg, rng, report)

    update_memory(buffer, session, rng)
    if use_bic:
        report.alpha, report.beta = fit_bic(bank, buffer, cfg)
    else:
        bank.bic = None

    report.buffer_histogram = buffer_histogram(buffer)
    report.wall_time = time.perf_counter() - started
    logger.info(
        f"Sesión terminada: {report.epochs_run} épocas, mejor época {report.best_epoch}, "
        f"{report.wall_time:.2f}s"
    )
    return report
