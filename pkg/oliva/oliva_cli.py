"""Command-line front door: `oliva estimate | hausman | simulate`.

Every flag can also be given in a `key=value` file passed with `--config`;
explicit flags win over the file. Exit codes: 0 success, 2 input error,
3 numerical failure (a JSON error object is printed on stderr).
"""
import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from oliva import __version__
from oliva.app.estimation.exogeneity import robust_hausman, standard_hausman
from oliva.app.estimation.first_stage import estimate_instrument, first_stage_diagnostics
from oliva.app.estimation.selection import (DEFAULT_C_VALUES, DEFAULT_J_VALUES,
                                            DEFAULT_LAMBDAS, GcvGrid, GcvTarget,
                                            select)
from oliva.app.estimation.tsiv import (estimate_tsiv, instrument_designs, ols_fit,
                                       tsls_fit)
from oliva.app.models.dataset import Dataset
from oliva.app.simulation.simulate import DgpConfig, run_cell, summary_table
from oliva.app.utils.config import Config
from oliva.app.utils.errors import ConfigError, ParseError, RoleError
from oliva.app.utils.failure import exit_code_on_failure
from oliva.app.utils.logger import Logger

SCHEMA_VERSION = 1

# flag -> (type, is_list, default)
FLAGS = {
    'input': (str, False, None),
    'outcome': (str, False, None),
    'endogenous': (str, True, ()),
    'controls': (str, True, ()),
    'instruments': (str, True, ()),
    'weights': (str, False, None),
    'j_values': (int, True, DEFAULT_J_VALUES),
    'c_values': (float, True, DEFAULT_C_VALUES),
    'lambdas': (float, True, DEFAULT_LAMBDAS),
    'degree': (int, False, None),
    'level': (float, False, 0.95),
    'format': (str, False, 'json'),
    'output': (str, False, None),
    'seed': (int, False, 0),
    'dgp': (int, True, (1,)),
    'rho': (float, True, (0.3,)),
    'gamma': (float, True, (0.8,)),
    'n': (int, True, (1000,)),
    'reps': (int, False, 1000),
    'lambda_multiplier': (float, False, 1.0),
    'workers': (int, False, None),
}

COMMAND_FLAGS = {
    'estimate': ('input', 'outcome', 'endogenous', 'controls', 'instruments',
                 'weights', 'j_values', 'c_values', 'lambdas', 'degree',
                 'level', 'format', 'output'),
    'hausman': ('input', 'outcome', 'endogenous', 'controls', 'instruments',
                'j_values', 'c_values', 'lambdas', 'degree', 'format', 'output'),
    'simulate': ('dgp', 'rho', 'gamma', 'n', 'reps', 'seed', 'lambdas',
                 'lambda_multiplier', 'workers', 'level', 'format', 'output'),
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    outcome: str | None = None
    endogenous: tuple = ()
    controls: tuple = ()
    instruments: tuple = ()
    weights: str | None = None
    j_values: tuple = DEFAULT_J_VALUES
    c_values: tuple = DEFAULT_C_VALUES
    lambdas: tuple = DEFAULT_LAMBDAS
    degree: int | None = None
    level: float = 0.95
    format: str = 'json'
    output: str | None = None
    seed: int = 0
    dgp: tuple = (1,)
    rho: tuple = (0.3,)
    gamma: tuple = (0.8,)
    n: tuple = (1000,)
    reps: int = 1000
    lambda_multiplier: float = 1.0
    workers: int | None = None
    verbose: bool = field(default=False, compare=False)

    def grid(self, target: GcvTarget = GcvTarget.TSIV) -> GcvGrid:
        return GcvGrid(self.j_values, self.c_values, self.lambdas, target)


def _convert(flag: str, raw):
    kind, is_list, _ = FLAGS[flag]
    try:
        if is_list:
            text = ' '.join(raw) if isinstance(raw, (list, tuple)) else str(raw)
            return tuple(kind(v) for v in text.replace(',', ' ').split())
        return kind(raw)
    except ValueError:
        raise ConfigError(f'invalid value for {flag}', value=str(raw))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='oliva', description='Two-step IV estimation of the optimal linear '
                                  'IV approximation, robust Hausman tests and '
                                  'Monte Carlo tables.')
    parser.add_argument('--version', action='version', version=__version__)
    commands = parser.add_subparsers(dest='command', required=True)
    for command, flags in COMMAND_FLAGS.items():
        sub = commands.add_parser(command)
        sub.add_argument('--config', help='key=value file mirroring the flags')
        sub.add_argument('--verbose', action='store_true')
        for flag in flags:
            _, is_list, _ = FLAGS[flag]
            # None marks "not given" so config-file values can fill in.
            sub.add_argument('--' + flag.replace('_', '-'), dest=flag,
                             nargs='+' if is_list else None, default=None)
    return parser


def parse_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    flags = COMMAND_FLAGS[args.command]
    given = {flag: getattr(args, flag) for flag in flags
             if getattr(args, flag) is not None}
    if args.config:
        from_file = Config.read_config_file(args.config, known_keys=set(flags))
        given = {**from_file, **given}
    values = {flag: _convert(flag, raw) for flag, raw in given.items()}
    cfg = RunConfig(command=args.command, verbose=args.verbose, **values)
    if cfg.format not in ('json', 'csv'):
        raise ConfigError('format must be json or csv', format=cfg.format)
    return cfg


def load_dataset(cfg: RunConfig) -> tuple[Dataset, object]:
    if not cfg.input:
        raise RoleError('--input is required')
    if not cfg.outcome:
        raise RoleError('--outcome is required')
    try:
        frame = pd.read_csv(cfg.input, encoding='utf-8')
    except (OSError, UnicodeDecodeError, pd.errors.ParserError,
            pd.errors.EmptyDataError) as e:
        raise ParseError(f'cannot read {cfg.input}: {e}', path=cfg.input)
    data = Dataset.from_frame(frame, cfg.outcome, list(cfg.endogenous),
                              list(cfg.instruments), list(cfg.controls))
    weights = None
    if cfg.weights:
        if cfg.weights not in frame.columns:
            raise RoleError(f'column {cfg.weights!r} not found in header',
                            column=cfg.weights, role='weights')
        if cfg.weights in (cfg.outcome, *cfg.endogenous, *cfg.instruments,
                           *cfg.controls):
            raise RoleError(f'column {cfg.weights!r} has two roles',
                            column=cfg.weights)
        weights = pd.to_numeric(frame[cfg.weights], errors='coerce').to_numpy()
    return data, weights


def _tuning_dict(tuning) -> dict:
    return {'j': tuning.j, 'c': tuning.c, 'k': tuning.k, 'lambda': tuning.lam}


def estimate_command(cfg: RunConfig) -> dict:
    data, weights = load_dataset(cfg)
    selection = select(data, cfg.grid(), cfg.degree)
    g_selection = select(data, cfg.grid(GcvTarget.STRUCTURAL), cfg.degree)
    fit = estimate_tsiv(data, selection.chosen, g_selection.chosen, cfg.level,
                        weights=weights, degree=cfg.degree)
    diagnostics = first_stage_diagnostics(fit.instrument, data)
    Logger().get_logger().info(
        f'TSIV with j={selection.chosen.j}, c={selection.chosen.c}, '
        f'lambda={selection.chosen.lam:.3g}; smallest singular value of '
        f"En[hX'] = {diagnostics.smallest_singular_value:.4g}")
    return {
        'schema': SCHEMA_VERSION,
        'command': 'estimate',
        'n': data.n,
        'level': cfg.level,
        'tuning': _tuning_dict(selection.chosen),
        'gcv_score': selection.score,
        'structural_tuning': _tuning_dict(g_selection.chosen),
        'tsiv': fit.to_dict(),
        'ols': ols_fit(data, cfg.level).to_dict(),
        'tsls': tsls_fit(data, cfg.level).to_dict(),
        'standard_hausman_p_value': standard_hausman(data).p_value,
        'diagnostics': diagnostics.to_dict(),
    }


def hausman_command(cfg: RunConfig) -> dict:
    data, _ = load_dataset(cfg)
    chosen = select(data, cfg.grid(), cfg.degree).chosen
    instrument = estimate_instrument(data, *instrument_designs(data, chosen, cfg.degree),
                                     chosen.lam)
    return {
        'schema': SCHEMA_VERSION,
        'command': 'hausman',
        'n': data.n,
        'tuning': _tuning_dict(chosen),
        'robust': robust_hausman(data, instrument).to_dict(),
        'standard': standard_hausman(data).to_dict(),
        'diagnostics': first_stage_diagnostics(instrument, data).to_dict(),
    }


def simulate_command(cfg: RunConfig) -> pd.DataFrame:
    summaries = [
        run_cell(DgpConfig(dgp, rho, gamma, n), cfg.reps, base_seed=cfg.seed,
                 n_jobs=cfg.workers, lambda_multiplier=cfg.lambda_multiplier,
                 lambda_values=cfg.lambdas, level=cfg.level)
        for dgp in cfg.dgp for gamma in cfg.gamma for n in cfg.n for rho in cfg.rho
    ]
    return summary_table(summaries)


def _report_frame(report: dict) -> pd.DataFrame:
    rows = []
    for estimator in ('tsiv', 'ols', 'tsls'):
        for name, values in report.get(estimator, {}).items():
            rows.append({'estimator': estimator, 'coefficient': name,
                         'estimate': values['estimate'], 'se': values['se'],
                         'ci_low': values['ci'][0], 'ci_high': values['ci'][1]})
    for variant in ('robust', 'standard'):
        if variant in report:
            rows.append({'estimator': f'hausman_{variant}',
                         'coefficient': 'statistic',
                         'estimate': report[variant]['statistic'],
                         'p_value': report[variant]['p_value']})
    return pd.DataFrame(rows)


def write_output(result, cfg: RunConfig) -> None:
    if isinstance(result, pd.DataFrame):
        text = result.to_csv(index=False) if cfg.format == 'csv' else \
            json.dumps({'schema': SCHEMA_VERSION, 'command': cfg.command,
                        'cells': json.loads(result.to_json(orient='records'))},
                       indent=2) + '\n'
    elif cfg.format == 'csv':
        text = _report_frame(result).to_csv(index=False)
    else:
        text = json.dumps(result, indent=2) + '\n'

    if cfg.output:
        Path(cfg.output).write_text(text, encoding='utf-8')
    else:
        sys.stdout.write(text)


COMMANDS = {
    'estimate': estimate_command,
    'hausman': hausman_command,
    'simulate': simulate_command,
}


@exit_code_on_failure
def run(cfg: RunConfig) -> None:
    write_output(COMMANDS[cfg.command](cfg), cfg)


@exit_code_on_failure
def _parse_into(holder: list, argv) -> None:
    holder.append(parse_config(argv))


def main(argv=None) -> int:
    holder = []
    code = _parse_into(holder, argv)
    if code:
        return code
    cfg = holder[0]
    if cfg.verbose:
        os.environ['OLIVA_LOG_LEVEL'] = 'DEBUG'
        Logger(force_recreate=True)
    return run(cfg)


if __name__ == '__main__':
    sys.exit(main())
