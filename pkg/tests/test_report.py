import csv

import numpy
import pytest
from numpy.testing import assert_allclose

from dbea.benchmarks import OODRun
from dbea.errors import DataError
from dbea.metrics import (LABEL_ID, LABEL_OOD, OODBenchmarkResult, auroc, ood_benchmark,
                          scored_samples)
from dbea.report import (COLUMNS, emit_plots, emit_report, histogram_data, load_report,
                         read_curve_csv, report_row)
from dbea.training import RunManifest


def _run(id_scores, ood_scores, level='image'):
    samples = scored_samples(id_scores, ood_scores)
    return OODRun(ood_benchmark(samples), samples, [], level)


def test_empty_report_is_valid(tmp_path):
    manifest = RunManifest(config_hash="0" * 64)
    json_path, csv_path = emit_report(manifest, [], str(tmp_path))
    assert load_report(json_path) == []
    with open(csv_path, encoding='utf-8') as f:
        assert f.read() == ",".join(COLUMNS) + "\n"
    assert set(manifest.files) == {'report.json', 'report.csv'}


def test_report_rows(tmp_path):
    manifest = RunManifest(config_hash="a" * 64, seed=3)
    ood = OODBenchmarkResult(auroc=0.123456789, aupr_in=0.5, aupr_out=None, fpr_at_95=0.25,
                             de_at_95=0.125)
    rows = [report_row("dbea far", ood=ood), report_row("empty")]
    json_path, csv_path = emit_report(manifest, rows, str(tmp_path))
    loaded = load_report(json_path)
    assert loaded[0]['AUROC'] == 0.123456789
    assert loaded[0]['AUPR-Out'] is None and loaded[0]['mAP'] is None
    assert loaded[1] == dict({c: None for c in COLUMNS}, model="empty")
    with open(csv_path, encoding='utf-8', newline='') as f:
        table = list(csv.reader(f))
    assert tuple(table[0]) == COLUMNS
    assert table[1][0] == "dbea far" and table[1][COLUMNS.index('AUROC')] == "0.1235"
    assert table[1][COLUMNS.index('AUPR-Out')] == ""

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding='utf-8')
    with pytest.raises(DataError):
        load_report(str(broken))


def test_histogram_counts():
    rng = numpy.random.default_rng(0)
    samples = scored_samples(rng.uniform(size=37), rng.uniform(1.0, 2.0, size=21))
    edges, counts = histogram_data(samples, bins=10)
    assert len(edges) == 11
    assert counts[LABEL_ID].sum() == 37 and counts[LABEL_OOD].sum() == 21
    edges, counts = histogram_data(scored_samples([1.0, 2.0], []))
    assert set(counts) == {LABEL_ID}
    with pytest.raises(DataError):
        histogram_data([])


def test_roc_csv_matches_reported_auroc(tmp_path):
    rng = numpy.random.default_rng(1)
    runs = {"ID vs far": _run(rng.normal(size=200), rng.normal(1.0, size=150))}
    paths = emit_plots(runs, str(tmp_path))
    roc = [p for p in paths if p.endswith('_roc.csv')]
    assert len(roc) == 1
    curve = read_curve_csv(roc[0])
    area = numpy.sum(numpy.diff(curve['fpr']) * (curve['tpr'][1:] + curve['tpr'][:-1]) / 2.0)
    assert abs(area - runs["ID vs far"].result.auroc) <= 1e-9
    assert curve['threshold'][0] == numpy.inf


def test_perfect_separation_curve(tmp_path):
    paths = emit_plots({"perfect": _run([0.1, 0.2, 0.3], [0.7, 0.8])}, str(tmp_path))
    curve = read_curve_csv([p for p in paths if p.endswith('_roc.csv')][0])
    points = set(zip(curve['fpr'], curve['tpr']))
    assert (0.0, 1.0) in points
    assert_allclose(auroc(scored_samples([0.1, 0.2, 0.3], [0.7, 0.8])), 1.0)


def test_single_label_has_no_roc(tmp_path):
    paths = emit_plots({"only id": _run([0.1, 0.2], []), "none": _run([], [])}, str(tmp_path))
    assert [p.rsplit('/', 1)[-1] for p in paths] == ['only_id_image_hist.csv',
                                                     'only_id_image_hist.svg']
    hist = read_curve_csv(paths[0])
    assert set(hist) == {'bin_left', 'bin_right', 'count_' + LABEL_ID}


def test_plots_are_reproducible(tmp_path):
    runs = {"near": _run([0.1, 0.4, 0.2], [0.3, 0.5], level='object')}
    first = emit_plots(runs, str(tmp_path / "a"))
    second = emit_plots(runs, str(tmp_path / "b"))
    assert [p.rsplit('/', 1)[-1] for p in first] == ['near_object_hist.csv', 'near_object_hist.svg',
                                                     'near_object_roc.csv', 'near_object_roc.svg']
    for a, b in zip(first, second):
        with open(a, 'rb') as f, open(b, 'rb') as g:
            assert f.read() == g.read()


def test_run_png_display():
    run = _run([0.1, 0.2, 0.3], [0.7, 0.8])
    data = run._repr_png_()
    assert data[:8] == b'\x89PNG\r\n\x1a\n'
    assert run._repr_png_() is data
    assert _run([], [])._repr_png_() is None
