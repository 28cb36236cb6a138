import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from incremental_app.datasets import (
    Dataset, DatasetError, FeatureFileError, LabeledExample, gen_gaussian_blobs,
    load_feature_file, save_feature_file, split_into_groups, validation_count,
)
from incremental_app.numerics import Rng


def blobs(num_classes=20, dim=4, n_train=10, n_test=5, separation=3.0, seed=0):
    return gen_gaussian_blobs(num_classes, dim, n_train, n_test, separation, Rng(seed))


class DatasetTests(SimpleTestCase):

    def test_class_set_matches_labels(self):
        ds = Dataset(np.zeros((3, 1, 1, 2)), [4, 1, 4])
        self.assertEqual(ds.class_set, {1, 4})
        self.assertEqual(ds.feature_shape, (1, 1, 2))

    def test_mixed_shapes_rejected(self):
        examples = [
            LabeledExample(np.zeros((1, 1, 2)), 0),
            LabeledExample(np.zeros((1, 1, 3)), 1),
        ]
        with self.assertRaises(DatasetError):
            Dataset.from_examples(examples)

    def test_arrays_are_read_only(self):
        ds = Dataset(np.ones((2, 1, 1, 2)), [0, 1])
        with self.assertRaises(ValueError):
            ds.features[0, 0, 0, 0] = 5.0

    def test_subset_and_concat(self):
        train, _ = blobs(num_classes=3, n_train=4)
        first = train.subset([0, 1], origin='val')
        second = train.subset([4, 5], origin='val')
        joined = Dataset.concat([first, second])
        self.assertEqual(len(joined), 4)
        self.assertEqual(joined.origin, 'val')
        self.assertTrue(all(ex.origin == 'val' for ex in joined.examples))
        np.testing.assert_array_equal(joined.features[2], train.features[4])

    def test_fingerprint_tracks_content(self):
        a, _ = blobs(seed=1)
        b, _ = blobs(seed=1)
        c, _ = blobs(seed=2)
        self.assertEqual(a.fingerprint(), b.fingerprint())
        self.assertNotEqual(a.fingerprint(), c.fingerprint())


class BlobTests(SimpleTestCase):

    def test_sizes_and_shape(self):
        train, test = blobs(num_classes=5, dim=8, n_train=7, n_test=3)
        self.assertEqual(len(train), 35)
        self.assertEqual(len(test), 15)
        self.assertEqual(train.feature_shape, (1, 1, 8))
        self.assertEqual(train.class_set, set(range(5)))

    def test_one_example_per_class(self):
        train, _ = blobs(num_classes=6, n_train=1)
        self.assertEqual(len(train), 6)

    def test_same_seed_same_data(self):
        a_train, a_test = blobs(seed=3)
        b_train, b_test = blobs(seed=3)
        np.testing.assert_array_equal(a_train.features, b_train.features)
        np.testing.assert_array_equal(a_test.features, b_test.features)

    def test_invalid_parameters(self):
        with self.assertRaises(DatasetError):
            blobs(separation=0.0)
        with self.assertRaises(DatasetError):
            blobs(dim=1)

    def test_means_lie_on_the_sphere(self):
        train, _ = blobs(num_classes=3, dim=6, n_train=400, separation=10.0)
        for c in range(3):
            mean = train.features[train.labels == c].reshape(-1, 6).mean(axis=0)
            self.assertAlmostEqual(float(np.linalg.norm(mean)), 10.0, delta=0.5)


class SplitTests(SimpleTestCase):

    def test_twenty_classes_five_splits(self):
        train, test = blobs()
        stream = split_into_groups(train, test, 5, 0.10, Rng(7))
        self.assertEqual(len(stream.sessions), 5)
        seen = set()
        for session in stream.sessions:
            self.assertEqual(len(session.class_ids), 4)
            self.assertFalse(seen & set(session.class_ids))
            seen |= set(session.class_ids)
            own = set(session.class_ids)
            self.assertEqual(session.train.class_set, own)
            self.assertEqual(session.val.class_set, own)
            self.assertEqual(session.test.class_set, own)
        self.assertEqual(seen, set(range(20)))
        self.assertEqual(sorted(stream.class_order), list(range(20)))

    def test_single_split_holds_every_class(self):
        train, test = blobs(num_classes=6)
        stream = split_into_groups(train, test, 1, 0.10, Rng(1))
        self.assertEqual(len(stream.sessions), 1)
        self.assertEqual(set(stream.sessions[0].class_ids), set(range(6)))
        self.assertEqual(len(stream.sessions[0].test), len(test))

    def test_class_order_independent_of_num_splits(self):
        train, test = blobs()
        orders = [split_into_groups(train, test, s, 0.10, Rng(7)).class_order for s in (1, 5, 10, 20)]
        self.assertTrue(all(order == orders[0] for order in orders))

    def test_stratified_validation_counts(self):
        train, test = blobs(num_classes=4, n_train=23)
        stream = split_into_groups(train, test, 2, 0.10, Rng(2))
        for session in stream.sessions:
            for c in session.class_ids:
                n_val = int(np.sum(session.val.labels == c))
                n_train = int(np.sum(session.train.labels == c))
                self.assertEqual(n_val + n_train, 23)
                self.assertLessEqual(abs(n_val - round(0.10 * 23)), 1)

    def test_validation_count_rounding(self):
        self.assertEqual(validation_count(100, 0.10), 10)
        self.assertEqual(validation_count(25, 0.10), 3)
        self.assertEqual(validation_count(3, 0.10), 1)
        self.assertEqual(validation_count(1, 0.10), 0)

    def test_non_divisible_class_count(self):
        train, test = blobs(num_classes=7)
        with self.assertRaises(DatasetError):
            split_into_groups(train, test, 2, 0.10, Rng(0))

    def test_origins_are_tagged(self):
        train, test = blobs(num_classes=4)
        session = split_into_groups(train, test, 2, 0.10, Rng(0)).sessions[0]
        self.assertEqual(session.train.origin, 'train')
        self.assertEqual(session.val.origin, 'val')
        self.assertEqual(session.test.origin, 'test')

    def test_missing_test_class(self):
        train, test = blobs(num_classes=4)
        partial = test.subset(np.flatnonzero(test.labels != 3), origin='test')
        with self.assertRaises(DatasetError):
            split_into_groups(train, partial, 2, 0.10, Rng(0))

    def test_class_order_for_seven(self):
        train, test = blobs(num_classes=100, n_train=2, n_test=1)
        stream = split_into_groups(train, test, 10, 0.10, Rng(7))
        self.assertEqual(stream.class_order, [
            11, 87, 25, 46, 30, 54, 39, 24, 75, 17, 15, 36, 1, 64, 20, 50, 26, 8, 19, 0,
            93, 69, 79, 18, 16, 14, 68, 61, 23, 73, 86, 78, 7, 49, 89, 84, 29, 35, 42, 77,
            44, 33, 63, 4, 67, 28, 45, 58, 41, 31, 99, 66, 62, 40, 2, 91, 80, 32, 71, 53,
            59, 57, 72, 22, 98, 60, 88, 55, 74, 6, 34, 81, 43, 3, 92, 56, 83, 52, 51, 90,
            10, 12, 85, 21, 47, 38, 76, 94, 65, 48, 13, 37, 9, 5, 97, 96, 95, 82, 27, 70,
        ])
        self.assertEqual(stream.sessions[0].class_ids, [11, 87, 25, 46, 30, 54, 39, 24, 75, 17])

    def test_stream_fingerprint_is_seeded(self):
        train, test = blobs(num_classes=4)
        a = split_into_groups(train, test, 2, 0.10, Rng(5)).fingerprint()
        b = split_into_groups(train, test, 2, 0.10, Rng(5)).fingerprint()
        self.assertEqual(a, b)


class FeatureFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.dir / 'features.csv'
        path.write_text(text, encoding='utf-8')
        return path

    def test_empty_body(self):
        ds = load_feature_file(self.write("label,h,w,d\n#shape,1,1,3\n"))
        self.assertEqual(len(ds), 0)
        self.assertEqual(ds.feature_shape, (1, 1, 3))

    def test_two_rows(self):
        ds = load_feature_file(self.write("label,h,w,d\n#shape,1,1,3\n0,1,2,3\n5,0.5,-1e-3,7\n"))
        self.assertEqual(len(ds), 2)
        self.assertEqual(ds.feature_shape, (1, 1, 3))
        self.assertEqual(list(ds.labels), [0, 5])
        self.assertEqual(float(ds.features[1, 0, 0, 1]), -1e-3)

    def test_round_trip_is_exact(self):
        train, _ = gen_gaussian_blobs(10, 5, 100, 1, 2.0, Rng(4))
        self.assertEqual(len(train), 1000)
        path = save_feature_file(train, self.dir / 'blobs.csv')
        loaded = load_feature_file(path)
        np.testing.assert_array_equal(loaded.labels, train.labels)
        self.assertEqual(loaded.features.tobytes(), train.features.tobytes())

    def test_spatial_maps_round_trip(self):
        features = Rng(8).normal_array((3, 2, 2, 3))
        ds = Dataset(features, [0, 1, 2])
        loaded = load_feature_file(save_feature_file(ds, self.dir / 'maps.csv'))
        self.assertEqual(loaded.feature_shape, (2, 2, 3))
        np.testing.assert_array_equal(loaded.features, ds.features)

    def test_bad_header_reports_line_one(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,x\n#shape,1,1,3\n"))
        self.assertEqual(ctx.exception.line_number, 1)

    def test_ragged_row_reports_its_line(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,1,2\n1,3\n"))
        self.assertEqual(ctx.exception.line_number, 4)
        self.assertIn("línea 4", str(ctx.exception))

    def test_non_numeric_field(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,1,abc\n"))
        self.assertEqual(ctx.exception.line_number, 3)

    def test_bad_shape_line(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\nshape,1,1\n"))
        self.assertEqual(ctx.exception.line_number, 2)

    def test_non_finite_value(self):
        with self.assertRaises(FeatureFileError):
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,1\n0,nan\n"))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_feature_file(self.dir / 'nope.csv')

    def test_saved_floats_are_shortest_repr(self):
        ds = Dataset(np.array([[[[0.1, 1.0 / 3.0]]]]), [2])
        text = save_feature_file(ds, self.dir / 'one.csv').read_text(encoding='utf-8')
        self.assertEqual(text.splitlines()[2], f"2,0.1,{1.0 / 3.0!r}")
        self.assertTrue(math.isclose(float(text.splitlines()[2].split(',')[2]), 1 / 3))

    def test_underscore_digits_rejected(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n1_0,1_000,2\n"))
        self.assertEqual(ctx.exception.line_number, 3)

    def test_extra_fields_report_their_line(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,1,2\n1,3,4\n2,5,6,7\n"))
        self.assertEqual(ctx.exception.line_number, 5)
        self.assertIn("3 características", str(ctx.exception))

    def test_blank_line_rejected(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,1,2\n\n1,3,4\n"))
        self.assertEqual(ctx.exception.line_number, 4)

    def test_empty_field_rejected(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,,2\n"))
        self.assertEqual(ctx.exception.line_number, 3)

    def test_negative_label_rejected(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,1\n0,1\n-2,1\n"))
        self.assertEqual(ctx.exception.line_number, 4)

    def test_overflowing_value_is_not_finite(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,1\n0,1e999\n"))
        self.assertIn("no finito", str(ctx.exception))

    def test_signed_and_exponent_fields_accepted(self):
        ds = load_feature_file(self.write("label,h,w,d\n#shape,1,1,3\n+3,-.5,2.,1E+2\n"))
        self.assertEqual(list(ds.labels), [3])
        np.testing.assert_array_equal(ds.features.reshape(-1), [-0.5, 2.0, 100.0])

    def test_first_row_with_extra_fields(self):
        with self.assertRaises(FeatureFileError) as ctx:
            load_feature_file(self.write("label,h,w,d\n#shape,1,1,2\n0,1,2,3\n1,3,4\n"))
        self.assertEqual(ctx.exception.line_number, 3)
