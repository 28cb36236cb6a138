# incremental_app/experiments.py
"""Corridas sembradas a partir de una configuración JSON.

Una corrida construye el flujo de sesiones una sola vez a partir de
(semilla, cantidad de clases), lo entrega al método elegido y escribe
report.json, curves.csv y model.json. Todas las semillas de componentes salen
de la semilla maestra: splitmix64(semilla ⊕ etiqueta del rol).
"""
import copy
import itertools
import json
import logging
import multiprocessing
import os
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import SingleHeadModel, er_train_session, gdumb_train_session
from .classifier_bank import ClassifierBank, parity_hidden_width, predict_batch
from .datasets import (
    DatasetError, gen_gaussian_blobs, load_feature_file, save_feature_file,
    split_into_groups,
)
from .evaluation import AccuracyMatrix, evaluate_session, forgetting
from .forms import BlobSpecForm, ExperimentConfigForm, SessionOverridesForm
from .memory_buffer import ReplayBuffer
from .numerics import Rng, derive_seed
from .trainer import SessionConfig, TrainingError, train_session

logger = logging.getLogger(__name__)

METHODS = ('ours', 'ours_no_bic', 'ours_no_freeze', 'er', 'gdumb')
REPORT_FILES = ('report.json', 'curves.csv', 'model.json')
CURVE_COLUMNS = ['session', 'seen_classes', 'method', 'accuracy']
GRID_KEYS = {'methods': 'method', 'splits': 'num_splits',
             'capacities': 'memory_capacity', 'seeds': 'seed'}

# Esquema de decaimiento por defecto de cada método
METHOD_SCHEDULES = {
    'ours': 'plateau',
    'ours_no_bic': 'plateau',
    'ours_no_freeze': 'plateau',
    'er': 'exponential',
    'gdumb': 'exponential',
}


class ConfigError(ValueError):
    """Configuración de experimento inválida; el mensaje nombra el campo"""
    pass


class IncompatibleReportsError(ValueError):
    """Reportes que no comparten datos o política de semillas"""
    pass


# === SEMILLAS ===
def role_tag(name):
    """Etiqueta fija de 64 bits de un rol: sus bytes ASCII, rellenados a 8"""
    raw = name.encode('ascii')
    if len(raw) > 8:
        raise ConfigError(f"Etiqueta de rol demasiado larga: {name}")
    return int.from_bytes(raw.ljust(8, b'\0'), 'big')


ROLE_TAGS = {name: role_tag(name) for name in ('data', 'stream', 'train')}
SEED_POLICY = 'splitmix64(seed ^ tag); tags=' + ','.join(
    f"{name}:{tag:#018x}" for name, tag in sorted(ROLE_TAGS.items())
)


def component_rng(seed, role):
    return Rng(derive_seed(seed, ROLE_TAGS[role]))


# === CONFIGURACIÓN ===
class ExperimentConfig:

    def __init__(self, method, num_splits, memory_capacity, seed, session=None,
                 blobs=None, train_file=None, test_file=None, output_dir=None,
                 baseline_hidden_width=None):
        self.method = method
        self.num_splits = num_splits
        self.memory_capacity = memory_capacity
        self.seed = seed
        self.session = dict(session or {})
        self.blobs = dict(blobs) if blobs else None
        self.train_file = train_file
        self.test_file = test_file
        self.output_dir = output_dir
        self.baseline_hidden_width = baseline_hidden_width

    @classmethod
    def from_dict(cls, data, base_dir=None):
        """Valida con los formularios y resuelve rutas relativas a base_dir"""
        if not isinstance(data, dict):
            raise ConfigError("La configuración debe ser un objeto JSON")
        data = dict(data)
        blobs = data.pop('blobs', None)
        session = data.pop('session', None) or {}
        known = set(ExperimentConfigForm.base_fields)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Campos desconocidos: {', '.join(sorted(unknown))}")

        form = ExperimentConfigForm(data, has_blobs=blobs is not None)
        _raise_first_error(form)
        values = form.cleaned_data

        if blobs is not None:
            if not isinstance(blobs, dict):
                raise ConfigError("blobs: se esperaba un objeto")
            extra = set(blobs) - set(BlobSpecForm.base_fields)
            if extra:
                raise ConfigError(f"blobs: campos desconocidos: {', '.join(sorted(extra))}")
            blob_form = BlobSpecForm(blobs)
            _raise_first_error(blob_form, prefix='blobs.')
            blobs = {k: v for k, v in blob_form.cleaned_data.items()
                     if not (k == 'seed' and v is None)}

        if not isinstance(session, dict):
            raise ConfigError("session: se esperaba un objeto")
        extra = set(session) - set(SessionOverridesForm.base_fields)
        if extra:
            raise ConfigError(f"session: campos desconocidos: {', '.join(sorted(extra))}")
        session_form = SessionOverridesForm(session)
        _raise_first_error(session_form, prefix='session.')

        def resolve(path):
            if not path:
                return None
            path = Path(path)
            if not path.is_absolute() and base_dir is not None:
                path = Path(base_dir) / path
            return str(path)

        return cls(
            method=values['method'],
            num_splits=values['num_splits'],
            memory_capacity=values['memory_capacity'],
            seed=values['seed'],
            session=session_form.overrides(),
            blobs=blobs,
            train_file=resolve(values.get('train_file')),
            test_file=resolve(values.get('test_file')),
            output_dir=values.get('output_dir') or None,
            baseline_hidden_width=values.get('baseline_hidden_width'),
        )

    def to_dict(self):
        payload = {
            'method': self.method,
            'num_splits': self.num_splits,
            'memory_capacity': self.memory_capacity,
            'seed': self.seed,
            'session': dict(sorted(self.session.items())),
        }
        if self.blobs is not None:
            payload['blobs'] = dict(self.blobs)
        else:
            payload['train_file'] = self.train_file
            payload['test_file'] = self.test_file
        if self.baseline_hidden_width is not None:
            payload['baseline_hidden_width'] = self.baseline_hidden_width
        return payload

    @property
    def run_name(self):
        return f"{self.method}_s{self.num_splits}_m{self.memory_capacity}_seed{self.seed}"

    def session_config(self):
        """SessionConfig de settings, con el esquema del método y los overrides"""
        overrides = dict(self.session)
        overrides.setdefault('lr_schedule', METHOD_SCHEDULES[self.method])
        try:
            return SessionConfig.from_settings(**overrides)
        except TrainingError as e:
            raise ConfigError(f"session: {e}") from e

    def resolve_output_dir(self):
        from django.conf import settings

        root = Path(settings.CONTINUAL_LEARNING['REPORTS_ROOT'])
        if not self.output_dir:
            return root / self.run_name
        path = Path(self.output_dir)
        return path if path.is_absolute() else root / path


def _raise_first_error(form, prefix=''):
    if form.is_valid():
        return
    field, errors = next(iter(form.errors.items()))
    name = 'config' if field == '__all__' else prefix + field
    raise ConfigError(f"{name}: {errors[0]}")


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Archivo de configuración no encontrado: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido en {path}: línea {e.lineno}: {e.msg}") from e
    return data


# === DATOS ===
def build_datasets(config):
    """(train, test, descripción de la fuente) para la configuración"""
    if config.blobs is not None:
        spec = dict(config.blobs)
        data_seed = spec.pop('seed', None)
        rng = Rng(data_seed) if data_seed is not None else component_rng(config.seed, 'data')
        train, test = gen_gaussian_blobs(rng=rng, **spec)
        source = {'kind': 'blobs', **spec}
        if data_seed is not None:
            source['seed'] = data_seed
        return train, test, source

    train = load_feature_file(config.train_file, origin='train')
    test = load_feature_file(config.test_file, origin='test')
    if train.feature_shape != test.feature_shape:
        raise DatasetError(f"Formas distintas: train {train.feature_shape}, test {test.feature_shape}")
    source = {
        'kind': 'files',
        'train_fingerprint': train.fingerprint(),
        'test_fingerprint': test.fingerprint(),
    }
    return train, test, source


def build_stream(config, train, test, val_fraction):
    return split_into_groups(train, test, config.num_splits, val_fraction,
                             component_rng(config.seed, 'stream'))


# === MÉTODOS ===
class _Learner:
    """Modelo del método y su paso de sesión"""

    def __init__(self, method, depth, cfg, baseline_width):
        self.method = method
        self.cfg = cfg
        if method.startswith('ours'):
            self.model = ClassifierBank(depth, cfg.use_activation)
            self.hidden_width = cfg.hidden_width
        else:
            self.model = SingleHeadModel(depth, baseline_width, cfg.use_activation)
            self.hidden_width = baseline_width

    def train(self, session, buffer, rng):
        if self.method == 'er':
            return er_train_session(self.model, session, buffer, self.cfg, rng)
        if self.method == 'gdumb':
            return gdumb_train_session(self.model, session, buffer, self.cfg, rng)
        return train_session(
            self.model, session, buffer, self.cfg, rng,
            freeze_previous=self.method != 'ours_no_freeze',
            use_bic=self.method != 'ours_no_bic',
        )

    def predict(self, features):
        return predict_batch(self.model, features)


def run_method(config, stream, cfg, baseline_width=None):
    """Entrena el método sobre todas las sesiones y mide después de cada una"""
    depth = stream.sessions[0].train.feature_shape[-1]
    num_classes = len(stream.class_order)
    if baseline_width is None:
        baseline_width = parity_hidden_width(depth, num_classes, config.num_splits, cfg.hidden_width)
    learner = _Learner(config.method, depth, cfg, baseline_width)
    buffer = ReplayBuffer(config.memory_capacity, val_fraction=cfg.val_fraction,
                          feature_shape=stream.sessions[0].train.feature_shape)
    rng = component_rng(config.seed, 'train')

    matrix = AccuracyMatrix()
    sessions = []
    seen = []
    for index, session in enumerate(stream.sessions):
        report = learner.train(session, buffer, rng)
        seen.extend(session.class_ids)
        row, seen_accuracy, bias, _ = evaluate_session(learner.predict, stream.sessions, index, seen)
        matrix.record(row, seen_accuracy, len(seen))
        sessions.append({
            'index': index,
            'class_ids': list(session.class_ids),
            'seen_classes': len(seen),
            'accuracies': row,
            'seen_accuracy': seen_accuracy,
            'last_group_bias': bias,
            'head_checksums': learner.model.checksums(),
            'training': report.to_dict(),
        })

    return {
        'learner': learner,
        'matrix': matrix,
        'sessions': sessions,
        'hidden_width': learner.hidden_width,
    }


# === CORRIDA ===
def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"No serializable: {type(value).__name__}")


def dump_json(payload):
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"


def curves_frame(method, sessions):
    return pd.DataFrame(
        [[s['index'], s['seen_classes'], method, s['seen_accuracy']] for s in sessions],
        columns=CURVE_COLUMNS,
    )


def _write_outputs(out_dir, contents):
    """Escribe cada archivo como temporal y lo renombra; ante un error borra
    lo escrito y el directorio si esta corrida lo creó"""
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, text in contents.items():
            final = out_dir / name
            tmp = out_dir / f".{name}.tmp"
            tmp.write_text(text, encoding='utf-8', newline='\n')
            written.append(tmp)
            os.replace(tmp, final)
            written.append(final)
    except OSError:
        remove_partial_outputs(out_dir, written, created)
        raise
    return [out_dir / name for name in contents]


def remove_partial_outputs(out_dir, paths=None, remove_dir=False):
    paths = paths if paths is not None else [out_dir / name for name in REPORT_FILES]
    for path in paths:
        try:
            Path(path).unlink()
        except FileNotFoundError:
            pass
    if remove_dir:
        try:
            out_dir.rmdir()
        except OSError:
            logger.warning(f"No se pudo borrar el directorio parcial {out_dir}")


def run_experiment(config):
    """Corre la configuración y escribe report.json, curves.csv y model.json.

    Misma configuración ⇒ report.json idéntico byte a byte (los tiempos de
    pared no se incluyen).
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    started = time.perf_counter()
    cfg = config.session_config()
    out_dir = config.resolve_output_dir()

    train, test, source = build_datasets(config)
    num_classes = len(train.class_set)
    if config.memory_capacity <= num_classes:
        raise ConfigError(
            f"memory_capacity: {config.memory_capacity} debe superar la cantidad de clases "
            f"({num_classes})"
        )
    stream = build_stream(config, train, test, cfg.val_fraction)

    logger.info(
        f"Corrida {config.run_name}: {num_classes} clases, {config.num_splits} sesiones, "
        f"B={config.memory_capacity}"
    )
    result = run_method(config, stream, cfg, config.baseline_hidden_width)
    matrix = result['matrix']
    model = result['learner'].model

    report = {
        'config': config.to_dict(),
        'method': config.method,
        'num_splits': config.num_splits,
        'memory_capacity': config.memory_capacity,
        'seed': config.seed,
        'seed_policy': SEED_POLICY,
        'dataset': source,
        'num_classes': num_classes,
        'feature_shape': list(train.feature_shape),
        'stream_fingerprint': stream.fingerprint(),
        'class_order': stream.class_order,
        'session_config': cfg.to_dict(),
        'hidden_width': result['hidden_width'],
        'params': {
            'total': model.total_params(),
            'trainable_final': model.count_trainable_params(),
        },
        'sessions': result['sessions'],
        'accuracy_matrix': matrix.acc,
        'seen_accuracy': matrix.seen_accuracy,
        'final_seen_accuracy': matrix.seen_accuracy[-1],
        'forgetting': forgetting(matrix),
    }
    curves = curves_frame(config.method, result['sessions'])
    paths = _write_outputs(out_dir, {
        'report.json': dump_json(report),
        'curves.csv': curves.to_csv(index=False, lineterminator='\n'),
        'model.json': dump_json(model.to_dict()),
    })
    logger.info(
        f"Corrida {config.run_name} terminada en {time.perf_counter() - started:.1f}s: "
        f"exactitud final {report['final_seen_accuracy']:.4f}"
    )
    return {'report': report, 'paths': paths, 'output_dir': out_dir}


# === COMPARACIÓN ===
def read_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / 'report.json'
    if not path.exists():
        raise IncompatibleReportsError(f"Reporte no encontrado: {path}")
    report = json.loads(path.read_text(encoding='utf-8'))
    for key in ('method', 'num_splits', 'memory_capacity', 'seed', 'dataset',
                'seed_policy', 'final_seen_accuracy', 'sessions'):
        if key not in report:
            raise IncompatibleReportsError(f"{path}: falta el campo '{key}'")
    return report


def _check_compatible(reports, paths):
    base = reports[0]
    for report, path in zip(reports[1:], paths[1:]):
        if report['dataset'] != base['dataset']:
            raise IncompatibleReportsError(
                f"{path}: datos distintos a {paths[0]} ({report['dataset']} vs {base['dataset']})"
            )
        if report['seed_policy'] != base['seed_policy']:
            raise IncompatibleReportsError(f"{path}: política de semillas distinta a {paths[0]}")
    # Misma celda y semilla ⇒ mismo flujo de sesiones
    streams = {}
    for report, path in zip(reports, paths):
        key = (report['num_splits'], report['seed'])
        fingerprint = report.get('stream_fingerprint')
        if key in streams and fingerprint != streams[key]:
            raise IncompatibleReportsError(f"{path}: flujo de sesiones distinto para {key}")
        streams.setdefault(key, fingerprint)


def _ordered_methods(index):
    return [m for m in METHODS if m in index] + sorted(m for m in index if m not in METHODS)


def comparison_table(reports):
    """Filas = métodos, columnas = (sesiones, memoria), valor = mediana de la
    exactitud final sobre las semillas"""
    frame = pd.DataFrame([{
        'method': r['method'],
        'num_splits': r['num_splits'],
        'memory_capacity': r['memory_capacity'],
        'seed': r['seed'],
        'final_seen_accuracy': r['final_seen_accuracy'],
    } for r in reports])
    table = frame.pivot_table(index='method', columns=['num_splits', 'memory_capacity'],
                              values='final_seen_accuracy', aggfunc='median')
    table = table.reindex(_ordered_methods(table.index))
    table.columns = [f"splits={s}/memory={m}" for s, m in table.columns]
    table.index.name = 'method'
    return table


def merged_curves(reports):
    """Curvas por sesión de todos los reportes, mediana sobre semillas"""
    rows = []
    for r in reports:
        for s in r['sessions']:
            rows.append({
                'method': r['method'],
                'num_splits': r['num_splits'],
                'memory_capacity': r['memory_capacity'],
                'session': s['index'],
                'seen_classes': s['seen_classes'],
                'accuracy': s['seen_accuracy'],
            })
    frame = pd.DataFrame(rows)
    keys = ['method', 'num_splits', 'memory_capacity', 'session', 'seen_classes']
    merged = frame.groupby(keys, as_index=False)['accuracy'].median()
    merged['method'] = pd.Categorical(merged['method'], _ordered_methods(set(merged['method'])))
    merged = merged.sort_values(keys).reset_index(drop=True)
    merged['method'] = merged['method'].astype(str)
    return merged


def compare(report_paths, out_dir=None):
    """Tabla comparativa y curvas combinadas; escribe comparison.csv y
    merged_curves.csv si se indica out_dir"""
    report_paths = [Path(p) for p in report_paths]
    if not report_paths:
        raise IncompatibleReportsError("No hay reportes para comparar")
    reports = [read_report(p) for p in report_paths]
    _check_compatible(reports, report_paths)

    table = comparison_table(reports)
    curves = merged_curves(reports)
    if out_dir is not None:
        out_dir = Path(out_dir)
        _write_outputs(out_dir, {
            'comparison.csv': table.to_csv(lineterminator='\n'),
            'merged_curves.csv': curves.to_csv(index=False, lineterminator='\n'),
        })
        logger.info(f"Comparación de {len(reports)} reportes escrita en {out_dir}")
    return table, curves


# === DATOS SINTÉTICOS A ARCHIVO ===
def generate_data(spec, out_dir):
    """Materializa blobs en train.csv / test.csv más spec.json"""
    if not isinstance(spec, dict):
        raise ConfigError("La especificación de datos debe ser un objeto JSON")
    spec = dict(spec.get('blobs', spec))
    extra = set(spec) - set(BlobSpecForm.base_fields)
    if extra:
        raise ConfigError(f"Campos desconocidos: {', '.join(sorted(extra))}")
    form = BlobSpecForm(spec)
    _raise_first_error(form)
    values = dict(form.cleaned_data)
    seed = values.pop('seed')
    if seed is None:
        raise ConfigError("seed: obligatorio para generar archivos")

    train, test = gen_gaussian_blobs(rng=Rng(seed), **values)
    out_dir = Path(out_dir)
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / 'train.csv', out_dir / 'test.csv', out_dir / 'spec.json']
    try:
        save_feature_file(train, paths[0])
        save_feature_file(test, paths[1])
        paths[2].write_text(dump_json({**values, 'seed': seed}), encoding='utf-8')
    except OSError:
        remove_partial_outputs(out_dir, paths, created)
        raise
    logger.info(f"Datos generados en {out_dir}: {len(train)} train, {len(test)} test")
    return paths


# === GRILLA ===
def expand_grid(grid, base_dir=None):
    """Producto cartesiano de los campos lista (methods, splits, capacities,
    seeds); cada celda escribe en su propio subdirectorio"""
    if not isinstance(grid, dict):
        raise ConfigError("La grilla debe ser un objeto JSON")
    grid = copy.deepcopy(grid)
    root = grid.pop('output_dir', None) or 'grid'
    axes = []
    for key, field in GRID_KEYS.items():
        if key in grid and field in grid:
            raise ConfigError(f"{key}: no se puede combinar con '{field}'")
        values = grid.pop(key, None)
        if values is None:
            values = [grid.pop(field)] if field in grid else None
        if not values:
            raise ConfigError(f"{key}: se requiere al menos un valor")
        if not isinstance(values, list):
            values = [values]
        axes.append((field, values))

    configs = []
    for combo in itertools.product(*[values for _, values in axes]):
        data = copy.deepcopy(grid)
        data.update({field: value for (field, _), value in zip(axes, combo)})
        config = ExperimentConfig.from_dict(data, base_dir=base_dir)
        config.output_dir = str(Path(root) / config.run_name)
        configs.append(config)
    return configs, root


def _init_worker():
    import django

    django.setup()


def _run_job(config):
    return str(run_experiment(config)['output_dir'] / 'report.json')


def run_grid(grid, workers=1, base_dir=None):
    """Corre cada celda como un trabajo independiente y compara al final"""
    configs, root = expand_grid(grid, base_dir=base_dir)
    workers = max(1, int(workers))
    logger.info(f"Grilla de {len(configs)} corridas con {workers} proceso(s)")
    if workers == 1:
        report_paths = [_run_job(c) for c in configs]
    else:
        with multiprocessing.Pool(workers, initializer=_init_worker) as pool:
            report_paths = pool.map(_run_job, configs)

    from django.conf import settings

    out_dir = Path(root)
    if not out_dir.is_absolute():
        out_dir = Path(settings.CONTINUAL_LEARNING['REPORTS_ROOT']) / out_dir
    table, curves = compare(report_paths, out_dir=out_dir)
    return {'reports': report_paths, 'table': table, 'curves': curves, 'output_dir': out_dir}
