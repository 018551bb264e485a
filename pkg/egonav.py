import sys
from typing import Optional, Sequence

from common import common
from config import Config
from egodata import DatasetSpec, action_statistics, collect, read_jsonl, split, write_jsonl
from harness import aggregate, format_table, read_reports, run_matrix, trajectory_csv_path, write_report, \
    write_trajectory_csv
from odometry import OdometerKind, evaluate_odometer, fit_calibrated, load_odometer


def _load_splits(config: Config):
    samples = read_jsonl(config.dataset_path)
    config.log('Loaded {} samples from `{}`'.format(len(samples), config.dataset_path))
    return split(samples, config.SPLIT_RATIO, config.SEED, config.UNSEEN_SCENES)


def run_collect(config: Config):
    config.log_configuration('Egomotion dataset collection')
    samples = collect(DatasetSpec.from_config(config), config)
    write_jsonl(samples, config.dataset_path)
    config.log('Saved {} samples to `{}`'.format(len(samples), config.dataset_path))


def run_stats(config: Config):
    samples = read_jsonl(config.dataset_path)
    config.log('{} samples in `{}`'.format(len(samples), config.dataset_path))
    for action, stats in action_statistics(samples).items():
        config.log('    {: <13}{}'.format(action.value, stats))


def run_fit_odometer(config: Config):
    splits = _load_splits(config)
    model = fit_calibrated(splits.train)
    model.save(config.calibrated_model_path)
    config.log('Fitted on {} training samples: {!r}'.format(len(splits.train), model))
    config.log('Calibrated odometer saved in: `{}`'.format(config.calibrated_model_path))


def run_evaluate_odometer(config: Config):
    splits = _load_splits(config)
    odometer = load_odometer(config, OdometerKind(config.EVAL_ODOMETER))
    results = {}
    for name, samples in splits._asdict().items():
        if not samples:
            config.log('{}: empty split, skipped'.format(name))
            continue
        results[name] = evaluate_odometer(odometer, samples)
        config.log('{}: {}'.format(name, results[name]))
    if config.EVAL_REPORT_PATH:
        common.save_json({'odometer': config.EVAL_ODOMETER,
                          'splits': {name: result.to_dict() for name, result in results.items()}},
                         config.EVAL_REPORT_PATH)


def run_experiments(config: Config):
    config.log_configuration('Navigation run')
    results = run_matrix(config)
    reports = [aggregate(records) for _, records in results if records]
    write_report(reports, config.report_path, config.SEED)
    config.log('Report saved in: `{}`'.format(config.report_path))
    if config.TRAJECTORIES_DIR:
        for _, records in results:
            for record in records:
                write_trajectory_csv(record, trajectory_csv_path(config.TRAJECTORIES_DIR, record))
        config.log('Trajectories saved in: `{}`'.format(config.TRAJECTORIES_DIR))
    for line in format_table(reports).splitlines():
        config.log(line)


def run_report(config: Config):
    table = format_table(read_reports(config.REPORT_INPUTS))
    sys.stdout.write(table)
    if config.TABLE_PATH:
        common.ensure_parent_dir(config.TABLE_PATH)
        with open(config.TABLE_PATH, 'w') as file:
            file.write(table)


COMMAND_HANDLERS = {
    'collect': run_collect,
    'stats': run_stats,
    'fit-odom': run_fit_odometer,
    'eval-odom': run_evaluate_odometer,
    'run': run_experiments,
    'report': run_report,
}


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Exit status: 0 on success, 2 for usage errors, 1 when the command fails."""
    try:
        config = Config(set_defaults=True, load_from_args=True, argv=argv)
    except SystemExit as exit_request:
        return 0 if exit_request.code in (0, None) else 2
    except (ValueError, OSError) as error:
        sys.stderr.write('egonav: error: {}\n'.format(error))
        return 2
    try:
        config.verify()
        COMMAND_HANDLERS[config.COMMAND](config)
    except (ValueError, OSError, KeyError) as error:
        config.get_logger().error('{} failed: {}'.format(config.COMMAND, error))
        if config.VERBOSE_MODE < 1:
            sys.stderr.write('egonav: error: {}\n'.format(error))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(cli())
