import json

import numpy as np
import pandas as pd
from django.conf import settings
from django.test import SimpleTestCase

from incremental_app.datasets import gen_gaussian_blobs, load_feature_file
from incremental_app.experiments import (
    ROLE_TAGS, SEED_POLICY, ConfigError, ExperimentConfig, IncompatibleReportsError,
    compare, component_rng, expand_grid, generate_data, load_config, role_tag,
    run_experiment, run_grid,
)
from incremental_app.numerics import Rng

from .fixtures import TemporaryReportsRootMixin, blob_config


class SeedPolicyTests(SimpleTestCase):

    def test_role_tags_are_padded_ascii(self):
        self.assertEqual(role_tag('data'), 0x6461746100000000)
        self.assertEqual(set(ROLE_TAGS), {'data', 'stream', 'train'})
        for name, tag in ROLE_TAGS.items():
            self.assertIn(f"{name}:{tag:#018x}", SEED_POLICY)

    def test_roles_draw_independent_streams(self):
        draws = {role: component_rng(7, role).next_u64() for role in ROLE_TAGS}
        self.assertEqual(len(set(draws.values())), 3)
        self.assertEqual(component_rng(7, 'train').next_u64(), draws['train'])

    def test_tag_longer_than_eight_bytes(self):
        with self.assertRaises(ConfigError):
            role_tag('stream-long')


class ConfigTests(TemporaryReportsRootMixin, SimpleTestCase):

    def assertConfigError(self, data, field):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig.from_dict(data)
        self.assertTrue(str(ctx.exception).startswith(field), str(ctx.exception))

    def test_valid_config(self):
        config = ExperimentConfig.from_dict(blob_config(seed=3))
        self.assertEqual(config.run_name, 'ours_s2_m20_seed3')
        self.assertEqual(config.resolve_output_dir(), self.root / 'reports' / 'ours_s2_m20_seed3')
        self.assertEqual(config.session['max_epochs'], 3)

    def test_errors_name_the_field(self):
        self.assertConfigError(blob_config(method='ewc'), 'method')
        self.assertConfigError(blob_config(num_splits=0), 'num_splits')
        self.assertConfigError(blob_config(seed=-1), 'seed')
        self.assertConfigError(blob_config(epochs=3), 'Campos desconocidos')
        self.assertConfigError(blob_config(session={'batch_size': 7}), 'session.batch_size')
        self.assertConfigError(blob_config(session={'momentum': 0.9}), 'session')
        bad_blobs = dict(blob_config()['blobs'], separation=0)
        self.assertConfigError(blob_config(blobs=bad_blobs), 'blobs.separation')

    def test_data_source_is_required_and_unique(self):
        data = blob_config()
        del data['blobs']
        self.assertConfigError(data, 'config')
        self.assertConfigError(blob_config(train_file='a.csv', test_file='b.csv'), 'config')
        self.assertConfigError(blob_config(train_file='a.csv'), 'config')

    def test_method_schedule_defaults(self):
        ours = ExperimentConfig.from_dict(blob_config()).session_config()
        er = ExperimentConfig.from_dict(blob_config(method='er')).session_config()
        self.assertEqual((ours.lr_schedule, er.lr_schedule), ('plateau', 'exponential'))
        forced = ExperimentConfig.from_dict(blob_config(
            method='er', session={'lr_schedule': 'plateau'})).session_config()
        self.assertEqual(forced.lr_schedule, 'plateau')

    def test_invalid_session_value(self):
        config = ExperimentConfig.from_dict(blob_config(session={'lr_decay_factor': 1.5}))
        with self.assertRaises(ConfigError):
            config.session_config()

    def test_relative_files_resolve_against_config_dir(self):
        data = blob_config(train_file='data/train.csv', test_file='data/test.csv')
        del data['blobs']
        config = ExperimentConfig.from_dict(data, base_dir=self.root)
        self.assertEqual(config.train_file, str(self.root / 'data' / 'train.csv'))

    def test_shipped_examples_are_valid(self):
        examples = settings.BASE_DIR / 'configs'
        for name in ('blobs_ours.json', 'files_er.json'):
            ExperimentConfig.from_dict(load_config(examples / name), base_dir=examples)
        configs, root = expand_grid(load_config(examples / 'grid_desk.json'))
        self.assertEqual((len(configs), root), (60, 'grid_desk'))

    def test_load_config(self):
        path = self.root / 'bad.json'
        path.write_text('{"method": ', encoding='utf-8')
        with self.assertRaises(ConfigError):
            load_config(path)
        with self.assertRaises(ConfigError):
            load_config(self.root / 'missing.json')


class RunExperimentTests(TemporaryReportsRootMixin, SimpleTestCase):

    def test_outputs_and_report_contents(self):
        result = run_experiment(ExperimentConfig.from_dict(blob_config()))
        out_dir = result['output_dir']
        for name in ('report.json', 'curves.csv', 'model.json'):
            self.assertTrue((out_dir / name).exists(), name)

        report = json.loads((out_dir / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['seed_policy'], SEED_POLICY)
        self.assertEqual(len(report['sessions']), 2)
        self.assertEqual([len(row) for row in report['accuracy_matrix']], [1, 2])
        self.assertEqual(len(report['forgetting']), 2)
        self.assertEqual(report['final_seen_accuracy'], report['seen_accuracy'][-1])
        self.assertEqual(sorted(report['class_order']), [0, 1, 2, 3])
        self.assertNotIn('wall_time', report['sessions'][0]['training'])

        curves = pd.read_csv(out_dir / 'curves.csv')
        self.assertEqual(list(curves.columns), ['session', 'seen_classes', 'method', 'accuracy'])
        self.assertEqual(list(curves['seen_classes']), [2, 4])

    def test_same_config_same_bytes(self):
        first = run_experiment(ExperimentConfig.from_dict(blob_config(output_dir='a')))
        second = run_experiment(ExperimentConfig.from_dict(blob_config(output_dir='b')))
        for name in ('report.json', 'model.json', 'curves.csv'):
            self.assertEqual((first['output_dir'] / name).read_bytes(),
                             (second['output_dir'] / name).read_bytes(), name)

    def test_other_seed_other_stream(self):
        a = run_experiment(ExperimentConfig.from_dict(blob_config(seed=1)))['report']
        b = run_experiment(ExperimentConfig.from_dict(blob_config(seed=2)))['report']
        self.assertNotEqual(a['stream_fingerprint'], b['stream_fingerprint'])

    def test_twenty_classes_five_sessions(self):
        blobs = {'num_classes': 20, 'dim': 4, 'n_train_per_class': 10,
                 'n_test_per_class': 3, 'separation': 3.0}
        report = run_experiment(ExperimentConfig.from_dict(
            blob_config(blobs=blobs, num_splits=5, memory_capacity=60)))['report']
        self.assertEqual([s['seen_classes'] for s in report['sessions']], [4, 8, 12, 16, 20])
        self.assertEqual([len(s['head_checksums']) for s in report['sessions']], [1, 2, 3, 4, 5])
        sessions = report['sessions']
        for i, session in enumerate(sessions[1:], start=1):
            self.assertEqual(session['head_checksums'][:i], sessions[i - 1]['head_checksums'])

    def test_one_session_ours_matches_er(self):
        session = dict(blob_config()['session'], lr_schedule='plateau')
        ours = run_experiment(ExperimentConfig.from_dict(
            blob_config(num_splits=1, session=session)))['report']
        er = run_experiment(ExperimentConfig.from_dict(
            blob_config(method='er', num_splits=1, session=session)))['report']
        self.assertEqual(er['hidden_width'], ours['hidden_width'])
        self.assertEqual(ours['sessions'][0]['head_checksums'], er['sessions'][0]['head_checksums'])
        self.assertEqual(ours['accuracy_matrix'], er['accuracy_matrix'])

    def test_every_method_runs(self):
        for method in ('ours_no_bic', 'ours_no_freeze', 'gdumb'):
            report = run_experiment(ExperimentConfig.from_dict(blob_config(method=method)))['report']
            self.assertEqual(report['method'], method)
            for value in report['seen_accuracy']:
                self.assertTrue(0.0 <= value <= 1.0)

    def test_memory_must_exceed_class_count(self):
        with self.assertRaises(ConfigError) as ctx:
            run_experiment(ExperimentConfig.from_dict(blob_config(memory_capacity=4)))
        self.assertIn('memory_capacity', str(ctx.exception))
        self.assertFalse((self.root / 'reports').exists())

    def test_runs_from_feature_files(self):
        data_dir = self.root / 'data'
        generate_data({'num_classes': 4, 'dim': 4, 'n_train_per_class': 20,
                       'n_test_per_class': 5, 'separation': 3.0, 'seed': 9}, data_dir)
        data = blob_config(train_file='data/train.csv', test_file='data/test.csv')
        del data['blobs']
        report = run_experiment(ExperimentConfig.from_dict(data, base_dir=self.root))['report']
        self.assertEqual(report['dataset']['kind'], 'files')
        self.assertEqual(report['num_classes'], 4)


class CompareTests(TemporaryReportsRootMixin, SimpleTestCase):

    def run_report(self, **overrides):
        return run_experiment(ExperimentConfig.from_dict(blob_config(**overrides)))['output_dir']

    def test_single_report(self):
        path = self.run_report()
        table, curves = compare([path])
        self.assertEqual(list(table.index), ['ours'])
        self.assertEqual(list(table.columns), ['splits=2/memory=20'])
        self.assertEqual(len(curves), 2)

    def test_median_over_seeds_and_method_order(self):
        paths = [self.run_report(method=m, seed=s) for m in ('gdumb', 'ours') for s in (0, 1, 2)]
        table, curves = compare(paths, out_dir=self.root / 'cmp')
        self.assertEqual(list(table.index), ['ours', 'gdumb'])

        finals = [json.loads((p / 'report.json').read_text())['final_seen_accuracy'] for p in paths[3:]]
        self.assertAlmostEqual(table.loc['ours', 'splits=2/memory=20'], float(np.median(finals)))
        self.assertTrue((self.root / 'cmp' / 'comparison.csv').exists())
        self.assertTrue((self.root / 'cmp' / 'merged_curves.csv').exists())
        self.assertEqual(len(curves), 4)

    def test_different_data_is_rejected(self):
        other_blobs = dict(blob_config()['blobs'], separation=5.0)
        paths = [self.run_report(), self.run_report(method='er', blobs=other_blobs)]
        with self.assertRaises(IncompatibleReportsError):
            compare(paths)

    def test_missing_report(self):
        with self.assertRaises(IncompatibleReportsError):
            compare([self.root / 'nope'])


class GenerateDataTests(TemporaryReportsRootMixin, SimpleTestCase):
    spec = {'num_classes': 20, 'dim': 4, 'n_train_per_class': 100,
            'n_test_per_class': 10, 'separation': 3.0, 'seed': 5}

    def test_files_match_in_memory_generation(self):
        train_path, test_path, spec_path = generate_data(self.spec, self.root / 'one')
        train = load_feature_file(train_path)
        self.assertEqual(len(train), 2000)
        self.assertEqual(len(load_feature_file(test_path)), 200)

        values = {k: v for k, v in self.spec.items() if k != 'seed'}
        expected, _ = gen_gaussian_blobs(rng=Rng(5), **values)
        self.assertEqual(train.features.tobytes(), expected.features.tobytes())
        self.assertEqual(json.loads(spec_path.read_text())['seed'], 5)

    def test_same_spec_same_files(self):
        first = generate_data(self.spec, self.root / 'one')
        second = generate_data(self.spec, self.root / 'two')
        for a, b in zip(first, second):
            self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_seed_is_required(self):
        spec = {k: v for k, v in self.spec.items() if k != 'seed'}
        with self.assertRaises(ConfigError):
            generate_data(spec, self.root / 'one')


class GridTests(TemporaryReportsRootMixin, SimpleTestCase):

    def grid(self, **overrides):
        data = blob_config()
        for key in ('method', 'num_splits', 'memory_capacity', 'seed'):
            del data[key]
        data.update({'methods': ['ours', 'er'], 'splits': [1, 2],
                     'capacities': [20], 'seeds': [0, 1]})
        data.update(overrides)
        return data

    def test_expand_cartesian_product(self):
        configs, root = expand_grid(self.grid(output_dir='sweep'))
        self.assertEqual(root, 'sweep')
        self.assertEqual(len(configs), 8)
        names = [c.run_name for c in configs]
        self.assertEqual(len(set(names)), 8)
        self.assertTrue(all(c.output_dir == f"sweep/{c.run_name}" for c in configs))

    def test_scalar_field_is_one_value_axis(self):
        data = self.grid()
        del data['seeds']
        data['seed'] = 4
        configs, _ = expand_grid(data)
        self.assertEqual({c.seed for c in configs}, {4})

    def test_invalid_axes(self):
        with self.assertRaises(ConfigError):
            expand_grid(self.grid(method='ours'))
        with self.assertRaises(ConfigError):
            expand_grid(self.grid(seeds=[]))

    def test_run_grid_inline(self):
        result = run_grid(self.grid(splits=[2], seeds=[0]), workers=1)
        self.assertEqual(len(result['reports']), 2)
        self.assertEqual(list(result['table'].index), ['ours', 'er'])
        self.assertEqual(result['output_dir'], self.root / 'reports' / 'grid')
        self.assertTrue((result['output_dir'] / 'comparison.csv').exists())
