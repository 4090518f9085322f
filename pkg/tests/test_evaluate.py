import os
import csv

import numpy as np

from pysimba import evaluate, metrics
from pysimba.geometry import PointCloud, write_point_cloud
from pysimba.errors import PointCloudFormatError

from helpers import scratch_dir

NAME = 'Evaluation'


def _cloud(seed, label=None, n=64):
    return PointCloud(np.random.default_rng(seed).uniform(-0.5, 0.5, size=(n, 3)), label=label)

def _write_pairs(folder, shifts):
    '''Write gt/<id>.ply and pred/<id>.ply, each prediction translated along x.'''
    gt_dir = os.path.join(folder, 'gt')
    pred_dir = os.path.join(folder, 'pred')
    os.makedirs(gt_dir)
    os.makedirs(pred_dir)

    for i, (family, shift) in enumerate(shifts):
        gt = _cloud(i, label=family)
        pred = PointCloud(gt.points + [shift, 0.0, 0.0])
        write_point_cloud(os.path.join(gt_dir, 'shape-{}.ply'.format(i)), gt)
        write_point_cloud(os.path.join(pred_dir, 'shape-{}.ply'.format(i)), pred)

    return pred_dir, gt_dir

def _read_csv(path):
    with open(path, 'r', newline='', encoding='utf-8') as fd:
        return list(csv.reader(fd))


def test_list_clouds():
    with scratch_dir() as folder:
        for name in ('b.ply', 'a.xyz', 'c.txt', 'notes.md'):
            with open(os.path.join(folder, name), 'w', encoding='utf-8') as fd:
                fd.write('0 0 0\n')

        os.makedirs(os.path.join(folder, 'd.ply'))
        clouds = evaluate.list_clouds(folder)

    assert sorted(clouds) == ['a', 'b', 'c']

def test_identical_clouds_score_perfectly():
    with scratch_dir() as folder:
        pred_dir, gt_dir = _write_pairs(folder, [('box', 0.0), ('cylinder', 0.0)])
        report = evaluate.evaluate_dirs(pred_dir, gt_dir, with_mmd=True, workers=2)

        assert report.unmatched == []
        assert [row['id'] for row in report.rows] == ['shape-0', 'shape-1']

        for row in report.rows + report.aggregates:
            assert row['cd_l1'] == 0.0 and row['cd_l2'] == 0.0
            assert row['f_score'] == 1.0

        for row in report.aggregates:
            assert row['mmd'] == 0.0

        rows = _read_csv(report.write_csv(os.path.join(folder, 'metrics.csv')))

    assert rows[0] == list(evaluate.CSV_COLUMNS)
    assert [row[0] for row in rows[1:]] == ['shape', 'shape', 'family', 'family', 'all']
    assert [row[1] for row in rows[1:]] == ['shape-0', 'shape-1', 'box', 'cylinder', 'all']
    assert rows[1][7] == '', 'Shape rows have no minimum matching distance'
    assert rows[-1][3] == '2'

def test_family_aggregates():
    shift = 0.5
    with scratch_dir() as folder:
        pred_dir, gt_dir = _write_pairs(folder, [('box', 0.0), ('box', shift), ('wing-profile', shift)])
        report = evaluate.evaluate_dirs(pred_dir, gt_dir, workers=1)

    by_id = {row['id']: row for row in report.rows}
    gt = _cloud(1)
    expected_l2 = metrics.chamfer_l2(PointCloud(gt.points + [shift, 0.0, 0.0]), gt) * evaluate.SCALE
    assert np.isclose(by_id['shape-1']['cd_l2'], expected_l2)
    assert by_id['shape-2']['family'] == 'wing-profile'

    box, wing, overall = report.aggregates
    assert (box['id'], box['count']) == ('box', 2)
    assert np.isclose(box['cd_l1'], (by_id['shape-0']['cd_l1'] + by_id['shape-1']['cd_l1']) / 2)
    assert np.isclose(box['f_score'], (1.0 + by_id['shape-1']['f_score']) / 2)
    assert (wing['id'], wing['count']) == ('wing-profile', 1)
    assert overall['count'] == 3
    assert np.isclose(overall['cd_l2'], np.mean([row['cd_l2'] for row in report.rows]))
    assert overall['mmd'] is None

def test_missing_label_is_unknown():
    with scratch_dir() as folder:
        pred_dir, gt_dir = _write_pairs(folder, [(None, 0.0)])
        report = evaluate.evaluate_dirs(pred_dir, gt_dir, workers=1)

    assert report.rows[0]['family'] == 'unknown'

def test_unmatched_ids():
    with scratch_dir() as folder:
        pred_dir, gt_dir = _write_pairs(folder, [('box', 0.0)])
        write_point_cloud(os.path.join(pred_dir, 'extra.ply'), _cloud(5))
        write_point_cloud(os.path.join(gt_dir, 'lonely.xyz'), _cloud(6))
        report = evaluate.evaluate_dirs(pred_dir, gt_dir, workers=1)

    assert report.unmatched == ['extra', 'lonely']
    assert len(report.rows) == 1

def test_malformed_prediction():
    with scratch_dir() as folder:
        pred_dir, gt_dir = _write_pairs(folder, [('box', 0.0)])

        with open(os.path.join(pred_dir, 'shape-0.ply'), 'w', encoding='utf-8') as fd:
            fd.write('1 2\n')

        try:
            evaluate.evaluate_dirs(pred_dir, gt_dir, workers=1)
            raise AssertionError('Malformed prediction accepted')
        except PointCloudFormatError:
            pass

def test_summarize_empty():
    report = evaluate.summarize([], unmatched=['a'])
    assert report.rows == [] and report.aggregates == [] and report.unmatched == ['a']

def test_f_score_threshold_follows_extent():
    gt = PointCloud(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0]]))
    near = PointCloud(gt.points + [0.05, 0.0, 0.0])

    assert evaluate.gt_extent(gt) == 10.0
    assert metrics.f_score(near, gt) == 0.0
    assert evaluate.shape_metrics('a', near, gt)['f_score'] == 1.0, 'Threshold should be 1% of the ground-truth extent'
    assert evaluate.shape_metrics('a', PointCloud(near.points * 0.01), PointCloud(gt.points * 0.01))['f_score'] == 1.0

    # power-of-two scaling is exact, so the score must not change at all
    cloud = _cloud(7)
    noisy = PointCloud(cloud.points + np.random.default_rng(8).normal(scale=0.01, size=cloud.points.shape))
    base = evaluate.shape_metrics('b', noisy, cloud)['f_score']
    scaled = evaluate.shape_metrics('b', PointCloud(noisy.points * 8.0), PointCloud(cloud.points * 8.0))['f_score']
    assert 0.0 < base < 1.0 and scaled == base

    assert evaluate.gt_extent(PointCloud(np.ones((3, 3)))) == 1.0


TESTS = [
    test_list_clouds,
    test_identical_clouds_score_perfectly,
    test_family_aggregates,
    test_missing_label_is_unknown,
    test_unmatched_ids,
    test_malformed_prediction,
    test_summarize_empty,
    test_f_score_threshold_follows_extent
]

def run():
    for test in TESTS:
        test()
        print('\t' + test.__name__ + ' passed')

    return True
