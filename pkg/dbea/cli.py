"""
Command line interface.

    dbea <command> [--config FILE] [--seed N] [--out DIR] [--level image|object]
                   [--checkpoint PATH]

Commands: generate, train, eval, ood-bench, novel-bench, overhead, report,
ablate. Exit codes: 0 success, 2 configuration error, 3 data error, 4
numeric divergence.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
import time

from . import __version__
from .benchmarks import (LEVELS, benchmark_suite, evaluate_detection, evaluate_records,
                         ground_truth, overhead_report, run_ablation,
                         run_novel_object_benchmark)
from .checkpoint import load_checkpoint
from .config import config_hash, dump_config, load_config
from .errors import DataError, DbeaError
from .metrics import DetectionRecord, ScoredSample, ood_benchmark
from .model import vanilla_counterpart
from .report import emit_plots, emit_report, report_row
from .training import RunManifest, train
from .utils import read_jsonl, worker_count, write_jsonl
from .world import IN_DISTRIBUTION, generate_dataset, write_split

logger = logging.getLogger(__name__)

CHECKPOINT = 'checkpoint.dbea'
MANIFEST = 'manifest.json'


def _config(args):
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes['seed'] = args.seed
    if args.out is not None:
        changes['output_dir'] = args.out
    config = dataclasses.replace(config, **changes)
    return config.validate()


def _manifest(config):
    # Reuse the manifest of the same run so every command adds to one file list.
    path = os.path.join(config.output_dir, MANIFEST)
    if os.path.exists(path):
        manifest = RunManifest.read(path)
        if manifest.config_hash == config_hash(config):
            return manifest
    return RunManifest(config_hash=config_hash(config), seed=config.seed,
                       mode=config.model.mode)


def _finish(config, manifest, started, command):
    manifest.timings[command] = time.perf_counter() - started
    manifest.write(os.path.join(config.output_dir, MANIFEST))


def _checkpoint(args, config):
    path = args.checkpoint or os.path.join(config.output_dir, CHECKPOINT)
    if not os.path.exists(path):
        raise DataError("no checkpoint at {}; run `dbea train` first".format(path))
    return load_checkpoint(path, config.model)


def _write_scores(path, runs):
    write_jsonl(path, (dict(record, pairing=name)
                       for name, run in runs.items() for record in run.records))


def cmd_generate(args, config, manifest, workers):
    splits = generate_dataset(config.dataset, config.seed, workers)
    data_dir = os.path.join(config.output_dir, 'data')
    os.makedirs(data_dir, exist_ok=True)
    outputs = [('train', IN_DISTRIBUTION, splits.train)]
    for name in ('val', 'test'):
        outputs += [(name, regime, samples) for regime, samples in getattr(splits, name).items()]
    for name, regime, samples in outputs:
        path = os.path.join(data_dir, "{}_{}.jsonl".format(name, regime))
        write_split(path, samples)
        manifest.add_file(path, config.output_dir)


def cmd_train(args, config, manifest, workers):
    path = os.path.join(config.output_dir, CHECKPOINT)
    _, trained = train(config, checkpoint_path=path, workers=workers)
    manifest.epochs = trained.epochs
    manifest.timings.update(trained.timings)
    manifest.add_file(path, config.output_dir)


def cmd_eval(args, config, manifest, workers):
    splits = generate_dataset(config.dataset, config.seed, workers)
    samples = splits.test[IN_DISTRIBUTION]
    if args.detections:
        records = [DetectionRecord.from_record(r) for r in read_jsonl(args.detections)]
        evaluation, _ = evaluate_records(records, ground_truth(samples))
    else:
        model = _checkpoint(args, config)
        evaluation, matched = evaluate_detection(model, samples, workers=workers)
        path = os.path.join(config.output_dir, 'detections.jsonl')
        write_jsonl(path, (r.to_record() for r in matched))
        manifest.add_file(path, config.output_dir)
    manifest.metrics['detection'] = evaluation.to_dict()
    print(json.dumps(evaluation.to_dict(), indent=2, sort_keys=True))


def cmd_ood_bench(args, config, manifest, workers):
    model = _checkpoint(args, config)
    splits = generate_dataset(config.dataset, config.seed, workers)
    detection, _ = evaluate_detection(model, splits.test[IN_DISTRIBUTION], workers=workers)
    manifest.metrics['detection'] = detection.to_dict()
    runs = benchmark_suite(model, splits, args.level, config.monitor, workers=workers)
    path = os.path.join(config.output_dir, 'scores_{}.jsonl'.format(args.level))
    _write_scores(path, runs)
    manifest.add_file(path, config.output_dir)
    rows = [report_row("{} {}".format(config.model.mode, regime), detection, run.result)
            for regime, run in runs.items()]
    manifest.metrics['ood_' + args.level] = {k: r.result.to_dict() for k, r in runs.items()}
    emit_report(manifest, rows, config.output_dir)
    for path in emit_plots(runs, config.output_dir):
        manifest.add_file(path, config.output_dir)


def cmd_novel_bench(args, config, manifest, workers):
    run, model, trained = run_novel_object_benchmark(config, workers=workers)
    path = os.path.join(config.output_dir, 'scores_object_novel.jsonl')
    _write_scores(path, {'novel_class': run})
    manifest.add_file(path, config.output_dir)
    manifest.epochs = trained.epochs
    manifest.metrics['novel_object'] = run.result.to_dict()
    emit_report(manifest, [report_row("{} novel".format(config.model.mode), ood=run.result)],
                config.output_dir)
    for path in emit_plots({'novel_class': run}, config.output_dir):
        manifest.add_file(path, config.output_dir)


def cmd_overhead(args, config, manifest, workers):
    dbea_config = dataclasses.replace(config.model, mode='dbea')
    report = overhead_report(vanilla_counterpart(dbea_config), dbea_config)
    manifest.metrics['overhead'] = report.to_dict()
    print("{:<10}{:>12}{:>12}".format('component', 'vanilla', 'dbea'))
    for row in report.rows():
        print("{component:<10}{vanilla:>12}{dbea:>12}".format(**row))
    print("head overhead {:+d}, trunk savings {:d}, delta {:.2%}".format(
        report.head_overhead, report.trunk_savings, report.delta))


def cmd_report(args, config, manifest, workers):
    path = os.path.join(config.output_dir, 'scores_{}.jsonl'.format(args.level))
    if not os.path.exists(path):
        raise DataError("no score dump at {}; run `dbea ood-bench` first".format(path))
    groups = {}
    for record in read_jsonl(path):
        score = record['image_usm'] if args.level == 'image' else record['usm']
        groups.setdefault(record['pairing'], []).append(ScoredSample(float(score),
                                                                     record['label']))
    detection = manifest.metrics.get('detection')
    rows = []
    for name, samples in groups.items():
        result = ood_benchmark(samples, name=name)
        row = report_row("{} {}".format(config.model.mode, name), ood=result)
        if detection:
            row.update({'mAP': detection['map'], 'AP50': detection['ap50'],
                        'PCorr-all': detection['pcorr_all'], 'PCorr-tp': detection['pcorr_tp']})
        rows.append(row)
    emit_report(manifest, rows, config.output_dir)


def cmd_ablate(args, config, manifest, workers):
    rows = run_ablation(config, seeds=args.seeds, level=args.level, workers=workers)
    path = os.path.join(config.output_dir, 'ablation.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([r.to_dict() for r in rows], f, indent=2, sort_keys=True)
        f.write('\n')
    manifest.add_file(path, config.output_dir)
    report = []
    for r in rows:
        for name, result in (('far', r.far), ('near', r.near)):
            if result is not None:
                report.append(report_row("{} seed {} {}".format(r.label, r.seed, name),
                                         r.detection, result))
    emit_report(manifest, report, config.output_dir)


COMMANDS = {
    'generate': (cmd_generate, "generate the synthetic dataset"),
    'train': (cmd_train, "train a model and write the checkpoint"),
    'eval': (cmd_eval, "detection metrics on the in-distribution test split"),
    'ood-bench': (cmd_ood_bench, "ID versus Near and Far OOD benchmarks"),
    'novel-bench': (cmd_novel_bench, "held-out class object-level benchmark"),
    'overhead': (cmd_overhead, "parameter counts of vanilla and dbea models"),
    'report': (cmd_report, "rebuild the report from a score dump"),
    'ablate': (cmd_ablate, "loss-weight ablation"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog='dbea', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', help="YAML run configuration (defaults if omitted)")
        p.add_argument('--seed', type=int, help="override the master seed")
        p.add_argument('--out', help="override the output directory")
        p.add_argument('--level', choices=LEVELS, default='image')
        p.add_argument('--checkpoint', help="checkpoint to use instead of OUT/checkpoint.dbea")
        p.add_argument('-v', '--verbose', action='store_true', help="debug logging")
        if name == 'eval':
            p.add_argument('--detections', help="evaluate this detection dump instead")
        if name == 'ablate':
            p.add_argument('--seeds', type=int, nargs='+', help="seeds to repeat the grid on")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = _config(args)
        os.makedirs(config.output_dir, exist_ok=True)
        manifest = _manifest(config)
        started = time.perf_counter()
        logger.debug("configuration:\n%s", dump_config(config))
        args.func(args, config, manifest, worker_count())
        _finish(config, manifest, started, args.command)
    except DbeaError as error:
        logger.error("%s", error)
        return error.exit_code
    except OSError as error:
        logger.error("%s", error)
        return DataError.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
