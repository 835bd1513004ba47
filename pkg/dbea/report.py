"""
Report and plot emission.

The report is written twice: ``report.json`` with full precision for
machines, and ``report.csv`` with one row per benchmark in the layout of a
results table. Plots are standalone SVG files, each with a CSV file holding
the plotted numbers.
"""
import csv
import json
import logging
import os

import matplotlib
import numpy
from matplotlib import pyplot
from IPython.core.pylabtools import print_figure

from .errors import DataError
from .metrics import LABEL_ID, LABEL_OOD, roc_curve

logger = logging.getLogger(__name__)

COLUMNS = ('model', 'mAP', 'AP50', 'PCorr-all', 'PCorr-tp', 'AUROC', 'AUPR-In', 'AUPR-Out',
           'FPR@95', 'DE@95')

_DETECTION_KEYS = {'mAP': 'map', 'AP50': 'ap50', 'PCorr-all': 'pcorr_all', 'PCorr-tp': 'pcorr_tp'}
_OOD_KEYS = {'AUROC': 'auroc', 'AUPR-In': 'aupr_in', 'AUPR-Out': 'aupr_out',
             'FPR@95': 'fpr_at_95', 'DE@95': 'de_at_95'}

LABEL_NAMES = {LABEL_ID: 'in-distribution', LABEL_OOD: 'OOD'}


def report_row(model, detection=None, ood=None):
    """
    One report row. Missing or undefined metrics are None.

    Parameters
    ----------

    model : string
        Row label
    detection : DetectionEvaluation, optional
    ood : OODBenchmarkResult, optional
    """
    row = {'model': model}
    for column, attr in _DETECTION_KEYS.items():
        row[column] = None if detection is None else getattr(detection, attr)
    for column, attr in _OOD_KEYS.items():
        row[column] = None if ood is None else getattr(ood, attr)
    return row


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return '{:.4f}'.format(value)
    return str(value)


def emit_report(manifest, results, out_dir):
    """
    Write ``report.json`` and ``report.csv`` and list both in the manifest.

    Parameters
    ----------

    manifest : RunManifest
        Supplies the config hash and seed; receives the file digests
    results : list of dict
        Rows as made by `report_row`
    out_dir : string

    Returns
    -------

    paths : tuple of string
        The JSON and CSV paths
    """
    rows = [{column: row.get(column) for column in COLUMNS} for row in results]
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, 'report.json')
    csv_path = os.path.join(out_dir, 'report.csv')
    document = {'config_hash': manifest.config_hash, 'seed': manifest.seed,
                'artifact_version': manifest.artifact_version, 'columns': list(COLUMNS),
                'rows': rows}
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True, allow_nan=False)
        f.write('\n')
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in COLUMNS])
    for path in (json_path, csv_path):
        manifest.add_file(path, out_dir)
    logger.info("wrote report with %d rows to %s", len(rows), out_dir)
    return json_path, csv_path


def load_report(path):
    """
    Rows of a ``report.json``.
    """
    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except ValueError as error:
            raise DataError("{}: {}".format(path, error))
    return document['rows']


def _figure_bytes(fig, fmt='svg'):
    with matplotlib.rc_context({'svg.hashsalt': 'dbea', 'svg.fonttype': 'none'}):
        data = print_figure(fig, fmt, metadata={'Date': None})
    pyplot.close(fig)
    return data.encode('utf-8') if isinstance(data, str) else data


def histogram_data(samples, bins=30):
    """
    Shared bin edges and per-label counts of a list of ScoredSamples.

    Returns
    -------

    edges : numpy array
    counts : dict
        label -> counts, only for labels present
    """
    scores = numpy.array([s.score for s in samples], dtype=float)
    if len(scores) == 0:
        raise DataError("no scores to plot")
    edges = numpy.histogram_bin_edges(scores, bins=bins)
    counts = {}
    for label in (LABEL_ID, LABEL_OOD):
        mask = numpy.array([s.label == label for s in samples], dtype=bool)
        if mask.any():
            counts[label] = numpy.histogram(scores[mask], bins=edges)[0]
    return edges, counts


def histogram_figure(samples, title="", bins=30):
    edges, counts = histogram_data(samples, bins)
    fig, ax = pyplot.subplots(figsize=(6, 4))
    for label, count in counts.items():
        ax.stairs(count, edges, fill=True, alpha=0.5, label=LABEL_NAMES[label])
    ax.set_xlabel(r"$U_{SM}$")
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return fig


def roc_figure(fpr, tpr, title=""):
    fig, ax = pyplot.subplots(figsize=(4.5, 4.5))
    ax.plot(fpr, tpr)
    ax.plot([0, 1], [0, 1], linestyle=':', color='grey')
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def _write_csv(path, header, rows):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, numpy.floating)) else v
                             for v in row])


def _slug(name):
    return ''.join(c if c.isalnum() else '_' for c in name).strip('_').lower() or 'run'


def emit_plots(runs, out_dir, bins=30):
    """
    Histograms of the scores of every benchmark run, and its ROC curve when
    both labels are present.

    Parameters
    ----------

    runs : dict
        pairing -> OODRun; files are named ``<pairing>_<level>_<kind>``, the
        pairing being the key used in the score dumps
    out_dir : string
        Files go to ``out_dir/plots``

    Returns
    -------

    paths : list of string
    """
    plot_dir = os.path.join(out_dir, 'plots')
    os.makedirs(plot_dir, exist_ok=True)
    paths = []
    for name, run in runs.items():
        if not run.samples:
            logger.warning("%s: no scored samples, nothing to plot", name)
            continue
        stem = os.path.join(plot_dir, "{}_{}".format(_slug(name), run.level))
        edges, counts = histogram_data(run.samples, bins)
        labels = list(counts)
        _write_csv(stem + '_hist.csv', ['bin_left', 'bin_right'] + ['count_' + l for l in labels],
                   [[edges[i], edges[i + 1]] + [int(counts[l][i]) for l in labels]
                    for i in range(len(edges) - 1)])
        with open(stem + '_hist.svg', 'wb') as f:
            f.write(_figure_bytes(histogram_figure(run.samples, name, bins)))
        paths += [stem + '_hist.csv', stem + '_hist.svg']
        if len(labels) < 2:
            continue
        scores = numpy.array([s.score for s in run.samples], dtype=float)
        is_ood = numpy.array([s.label == LABEL_OOD for s in run.samples], dtype=bool)
        fpr, tpr, thresholds = roc_curve(scores, is_ood)
        _write_csv(stem + '_roc.csv', ['fpr', 'tpr', 'threshold'],
                   zip(fpr, tpr, [float(t) for t in thresholds]))
        with open(stem + '_roc.svg', 'wb') as f:
            f.write(_figure_bytes(roc_figure(fpr, tpr, name)))
        paths += [stem + '_roc.csv', stem + '_roc.svg']
    logger.info("wrote %d plot files to %s", len(paths), plot_dir)
    return paths


def read_curve_csv(path):
    """
    Columns of a curve CSV written by `emit_plots`, as float arrays.
    """
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataError("{}: empty".format(path))
    header, body = rows[0], rows[1:]
    return {name: numpy.array([float(r[i]) for r in body]) for i, name in enumerate(header)}
