"""
Run chi-process extremes experiments from scenario YAMLs: Monte Carlo tails against closed-form asymptotics, Pickands
and Piterbarg constant ladders, local expansion checks and the separable field check

Usage - subcommands:
    $ python extremes.py simulate-tail --config thm21.yaml             # Monte Carlo tails over the u ladder
    $ python extremes.py eval-asymptotics --config thm21.yaml          # closed-form asymptotics only
    $ python extremes.py compare --config thm21.yaml --nsim 1000000    # both, with ratios and the ratio trend
    $ python extremes.py estimate-constant --config pickands-alpha2.yaml
    $ python extremes.py expansion-check --config thm22-fbm.yaml
    $ python extremes.py field-check --config field.yaml --json

Config resolution: data/scenarios/default.yaml < --config file < command line flags
Exit codes: 0 success, 2 invalid config, 3 theorem hypothesis violated, 4 sampler failure
"""

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np
from scipy import stats
from tqdm import tqdm

FILE = Path(__file__).resolve()
ROOT = FILE.parents[0]  # root directory
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))  # add ROOT to PATH
ROOT = Path(os.path.relpath(ROOT, Path.cwd()))  # relative

from models.covariance import (NonstationaryModel, StationaryModel, build_model, check_holder, check_r2,
                               local_expansion_params, local_fit, verify_expansion)
from models.trend import build_trend, eval_trend
from utils import ConfigError, HypothesisError, SamplerError
from utils.asymptotics import (GeneralizedChiWeights, generalized_chi_tail, marginal_tail, prop21_tail,
                               thm21_tail, thm22_tail, thm23_tail, thm31_field_tail, thm32_field_tail)
from utils.chi import ChiExperiment, build_experiment, estimate_tails
from utils.constants import (ConstantSpec, ConstantsRegistry, closed_form_P21, estimate_windowed, pickands_limit,
                             piterbarg_limit)
from utils.general import (LOGGER, TQDM_BAR_FORMAT, VERBOSE, Profile, check_yaml, colorstr, increment_path,
                           print_args, resolve_threads, yaml_load, yaml_save)
from utils.loggers import ReportLogger
from utils.metrics import binomial_interval, compare_ratio_trend
from utils.samplers import SampleGrid, SeedSpec, sample_separable_field

SUBCOMMANDS = {
    'simulate-tail': 'tail-vs-asymptotic',
    'eval-asymptotics': 'tail-vs-asymptotic',
    'compare': 'tail-vs-asymptotic',
    'estimate-constant': 'constant-ladder',
    'expansion-check': 'expansion-check',
    'field-check': 'field-check'}
DEFAULTS = ROOT / 'data/scenarios/default.yaml'
MEMORY = 2 ** 25  # max field values held per chunk
P21_TOL = 0.03  # relative agreement required to support a P^d_{2,1} closed form


def load_config(config='', **overrides):
    # Resolved scenario: defaults < config file < non-None overrides, unknown keys rejected
    cfg = yaml_load(DEFAULTS)
    if config:
        user = yaml_load(check_yaml(config))
        if not isinstance(user, dict):
            raise ConfigError(f'{config} must hold a flat key-value mapping')
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f'unknown config keys {sorted(unknown)} in {config}')
        cfg.update(user)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    u = cfg['u']
    cfg['u'] = sorted(float(x) for x in (u if isinstance(u, (list, tuple)) else [u]))
    return cfg


def _ci(value, stderr, confidence):
    z = stats.norm.ppf(1 - (1 - confidence) / 2)
    return value - z * stderr, value + z * stderr


def tail_asymptotic(exp: ChiExperiment, u, registry: ConstantsRegistry, weights=None):
    # Closed-form asymptotic matching the experiment's model, trend and interval
    model, trend, n = exp.model, exp.trend, exp.n
    if exp.single_point:
        level = u + (0.0 if trend.is_zero else float(eval_trend(trend, exp.T1)))
        if isinstance(model, NonstationaryModel):
            sd = float(model.sigma(exp.T1))
            if not sd > 0:
                raise HypothesisError(f'{model.id} has zero variance at t={exp.T1:g}')
            level /= sd  # paths are normalized at T, not at T1
        return marginal_tail(n, level)
    if isinstance(model, StationaryModel):
        L = exp.T - exp.T1
        if trend.form == 'none':
            return prop21_tail(L, model.alpha, model.d0, n, u, registry=registry)
        if trend.form == 'g1' and exp.T1 == 0:
            if weights is not None:
                return generalized_chi_tail(weights, model.alpha, trend.beta, trend.c, u, L, model.d0,
                                            registry=registry)
            return thm21_tail(model.alpha, trend.beta, trend.c, n, u, L, model.d0, registry=registry)
        if trend.form == 'interior':
            return thm21_tail(model.alpha, trend.beta, trend.c, n, u, L, model.d0, registry=registry, interior=True)
    elif math.isclose(exp.T, model.T):
        A, mu, D, nu = local_expansion_params(model)
        if trend.form == 'none':
            return thm22_tail(nu, mu, A, D, n, u, registry=registry)
        if trend.form == 'g2':
            return thm23_tail(nu, mu, A, D, n, u, trend.gT, trend.beta_tilde, registry=registry)
    raise HypothesisError(f"no asymptotic covers trend '{trend.form}' for {model.id} on [{exp.T1:g}, {exp.T:g}]")


def pickands_index(exp: ChiExperiment):
    # Index alpha of the Pickands constant the experiment's asymptotic needs, None if it needs none
    model, trend = exp.model, exp.trend
    if exp.single_point:
        return None
    if isinstance(model, StationaryModel):
        if trend.form == 'none' or (trend.form in ('g1', 'interior') and model.alpha < 2 * trend.beta):
            return model.alpha
        return None
    A, mu, D, nu = local_expansion_params(model)
    return nu if nu < mu and not math.isclose(nu, mu) else None


def estimate_missing(exp: ChiExperiment, registry: ConstantsRegistry, cfg, threads):
    # Window ladder estimate of a Pickands constant that is neither anchored nor supplied, stored in the registry
    alpha = pickands_index(exp)
    if alpha is None:
        return None
    try:
        registry.pickands_constant(alpha)
        return None
    except HypothesisError:
        LOGGER.info(f'{colorstr("tail: ")}H_{alpha:g} not anchored, estimating it from the window ladder')
    seeds = SeedSpec(int(cfg['seed']), stream=1, block=int(cfg['block']))
    est = pickands_limit(alpha, cfg['s_ladder'], cfg['delta_divisors'], int(cfg['constant_nsim']), seeds, threads,
                         method=str(cfg['method']), extrapolate=cfg.get('extrapolate') or None)
    registry.pickands[float(alpha)] = est
    return est


def run_tail(cfg, sid, logger, threads, simulate=True, evaluate=True):
    model = build_model(cfg)
    exp = build_experiment(cfg, model, build_trend(cfg, T=float(cfg['T']), start=float(cfg['T1'])), threads)
    weights = None
    if cfg.get('weights') is not None:
        if simulate:
            raise ConfigError('generalized chi weights are evaluated by eval-asymptotics only')
        weights = GeneralizedChiWeights(tuple(cfg['weights']), cfg.get('k'))
    registry = ConstantsRegistry.from_config(cfg.get('pickands'), cfg.get('piterbarg'))
    estimated = estimate_missing(exp, registry, cfg, threads) if evaluate and cfg.get('estimate_constants') else None
    levels = cfg['u']
    asyms = [tail_asymptotic(exp, u, registry, weights) if evaluate else None for u in levels]  # fail before sampling
    ests, dt = [None] * len(levels), Profile()
    if simulate:
        with dt:
            ests = estimate_tails(exp, levels)
        LOGGER.info(f'{colorstr("tail: ")}{model.id} n={exp.n} trend={exp.trend.form} on {ests[0].grid}')
    rows, regimes, constants, flags = [], set(), {}, set()
    for u, est, asym in zip(levels, ests, asyms):
        if asym is not None:
            regimes.add(asym.regime)
            constants.update(asym.constants)
            flags.update(asym.flags)
        phat = est.phat if est else None
        row = dict(scenario=sid,
                   u=u,
                   phat=phat,
                   ci_lo=est.ci[0] if est else None,
                   ci_hi=est.ci[1] if est else None,
                   asymptotic=asym.value if asym else None,
                   ratio=phat / asym.value if est and asym and asym.value > 0 else None,
                   regime=asym.regime if asym else ('simulation' if not exp.single_point else 'marginal'),
                   nsim=exp.nsim if est else None,
                   walltime_ms=dt.dt * 1e3 if est else None)
        logger.log_row(**row)
        rows.append(row)
        LOGGER.info(f'{sid}: u={u:g}' + (f' {est}' if est else '') + (f' | {asym}' if asym else ''))
    info = {'regime': sorted(regimes), 'constants': {k: list(v) for k, v in constants.items()}, 'flags': sorted(flags)}
    if exp.trend.experimental:
        info['flags'].append('EXPERIMENTAL')
    if estimated is not None:
        info['estimate'] = {'value': estimated.value, 'stderr': estimated.stderr, 'flags': list(estimated.flags)}
    if simulate and evaluate:
        trend = compare_ratio_trend(rows)
        LOGGER.info(f'{colorstr("ratio trend: ")}{trend}')
        info['ratio_trend'] = {'label': trend.label, 'levels': list(trend.levels),
                               'deviations': list(trend.deviations), 'skipped': list(trend.skipped), 'note': trend.note}
    return rows, info


def _reference(registry, family, alpha, beta, d, S=None):
    # Anchored or closed-form value of a limit (S=None) or windowed constant, None when not available
    try:
        if S is not None:
            return registry.windowed_constant(family, alpha, S, beta, d)[0]
        if family == 'pickands':
            return registry.pickands_constant(alpha)[0]
        return registry.piterbarg_constant(alpha, beta, d, two_sided=family == 'piterbarg2')[0]
    except HypothesisError:
        return None


def run_constants(cfg, sid, logger, threads):
    family, alpha, d = str(cfg['family']), float(cfg['alpha']), float(cfg['d'])
    beta = float(cfg['beta'])  # drift exponent of Piterbarg ladders
    seeds = SeedSpec(int(cfg['seed']), stream=1 if family == 'pickands' else 2, block=int(cfg['block']))
    extrapolate = cfg.get('extrapolate') or None
    kw = dict(s_ladder=cfg['s_ladder'], delta_divisors=cfg['delta_divisors'], nsim=int(cfg['nsim']), seeds=seeds,
              threads=threads, extrapolate=extrapolate)
    dt = Profile()
    with dt:
        if family == 'pickands':
            est = pickands_limit(alpha, method=str(cfg['method']), **kw)
        elif family in ('piterbarg', 'piterbarg2'):
            est = piterbarg_limit(alpha, beta, d, two_sided=family == 'piterbarg2', **kw)
        else:
            raise ConfigError(f"unknown constant family '{family}'")
    registry = ConstantsRegistry.from_config(cfg.get('pickands'), cfg.get('piterbarg'))
    conf, diag, rows = float(cfg['confidence']), est.diagnostics, []
    for i, S in enumerate(diag['windows']):
        ref = _reference(registry, family, alpha, beta, d, S)
        if ref is not None and family == 'pickands':
            ref /= S  # ladder values are H[0, S] / S
        for delta, v, se in zip(diag['deltas'], diag['values'][i], diag['stderr'][i]):
            lo, hi = _ci(v, se, conf)
            rows.append(dict(scenario=sid, u=S, phat=v, ci_lo=lo, ci_hi=hi, asymptotic=ref,
                             ratio=v / ref if ref else None, regime=f'delta={delta:.6g}', nsim=est.nsim))
    ref = _reference(registry, family, alpha, beta, d)
    lo, hi = _ci(est.value, est.stderr, conf)
    label = f"final:{cfg['method'] if family == 'pickands' else 'window'}"
    rows.append(dict(scenario=sid, u=est.S, phat=est.value, ci_lo=lo, ci_hi=hi, asymptotic=ref,
                     ratio=est.value / ref if ref else None, regime=label, nsim=est.nsim, walltime_ms=dt.dt * 1e3))
    for row in rows:
        logger.log_row(**row)
    info = {'regime': label, 'estimate': {'value': est.value, 'stderr': est.stderr, 'S': est.S, 'delta': est.delta},
            'flags': list(est.flags), 'diagnostics': diag, 'constants': {}}
    if ref is not None:
        info['constants'] = {family: [ref, 'anchor' if family == 'pickands' else 'closed-form']}
    if family == 'piterbarg' and alpha == 2 and beta == 1:
        info['P21'] = adjudicate_P21(est.value, d)
    return rows, info


def adjudicate_P21(value, d, tol=P21_TOL):
    # Which closed form of P^d_{2,1} the simulated value supports
    printed, derived = closed_form_P21(d)
    e_printed, e_derived = abs(value / printed - 1), abs(value / derived - 1)
    supported = 'inconclusive'
    if e_derived <= tol < e_printed:
        supported = 'derived'
    elif e_printed <= tol < e_derived:
        supported = 'printed'
    LOGGER.info(f'{colorstr("P21: ")}simulation {value:.5g} supports the {supported} closed form '
                f'(derived {derived:.5g}, rel. err {e_derived:.2%}; printed {printed:.5g}, rel. err {e_printed:.2%})')
    return {'simulated': value, 'derived': derived, 'printed': printed, 'supported': supported}


def run_expansion(cfg, sid, logger):
    model, rows = build_model(cfg), []
    if isinstance(model, StationaryModel):
        ok, bad = check_r2(model)
        lags = [float(h) for h in cfg['scales']]
        for h, r in zip(lags, local_fit(model, lags)):
            rows.append(dict(scenario=sid, u=h, ratio=float(r), regime='local-fit'))
        info = {'regime': 'stationary', 'r2': {'passed': ok, 'lag': bad}, 'passed': ok}
    else:
        report = verify_expansion(model, scales=tuple(cfg['scales']))
        for h, a, b in zip(report.scales, report.sigma_residuals, report.corr_residuals):
            rows.append(dict(scenario=sid, u=h, ratio=a, regime='sigma-residual'))
            rows.append(dict(scenario=sid, u=h, ratio=b, regime='corr-residual'))
        holder = check_holder(model)
        rows.append(dict(scenario=sid, u=holder.start, ratio=holder.max_ratio, regime='holder'))
        info = {'regime': 'nonstationary', 'expansion': list(local_expansion_params(model)),
                'holder': {'G': holder.G, 'gamma': holder.gamma, 'start': holder.start, 'passed': holder.passed},
                'passed': report.passed and holder.passed, 'offending_scale': report.offending_scale}
        LOGGER.info(f'{colorstr("expansion: ")}{model.id} {report}')
    if not info['passed']:
        LOGGER.warning(f'WARNING ⚠️ {model.id} failed its assumption checks, see {logger.csv}')
    for row in rows:
        logger.log_row(**row)
    return rows, info


def field_statistic(cfg, u, threads):
    # Per replication sup over [0, S1] x prod [0, u^(-2/alpha_i) S2] of xi_u(t, v) / (1 + c t^beta u^-2)
    a0, d0 = float(cfg['field_alpha0']), float(cfg['field_d0'])
    alphas, ds = [float(a) for a in cfg['field_alphas']], [float(d) for d in cfg['field_ds']]
    t_grid = SampleGrid(0.0, float(cfg['S1']), int(cfg['grid_t']))
    v_grids = [SampleGrid(0.0, u ** (-2 / a) * float(cfg['S2']), int(cfg['grid_v'])) for a in alphas]
    scale = 1 + float(cfg['c']) * t_grid.points() ** float(cfg['beta']) * u ** -2
    scale = scale.reshape((-1,) + (1,) * len(alphas))
    seeds = SeedSpec(int(cfg['seed']), stream=3, block=int(cfg['block']))
    nsim, B = int(cfg['nsim']), seeds.block
    size = t_grid.m * int(np.prod([g.m for g in v_grids]))
    chunk = max(B, MEMORY // size // B * B)
    starts = range(0, nsim, chunk)
    out = np.empty(nsim)
    pbar = tqdm(starts, desc=f'field u={u:g}', bar_format=TQDM_BAR_FORMAT, disable=not VERBOSE or len(starts) < 2)
    for first in pbar:
        batch = min(chunk, nsim - first)
        f = sample_separable_field(a0, d0, alphas, ds, u, t_grid, v_grids, batch, seeds, 0, first, threads)
        out[first:first + batch] = (f.values / scale).reshape(batch, -1).max(1)
    return out


def run_field(cfg, sid, logger, threads):
    a0, d0, beta, c = float(cfg['field_alpha0']), float(cfg['field_d0']), float(cfg['beta']), float(cfg['c'])
    alphas, ds = [float(a) for a in cfg['field_alphas']], [float(d) for d in cfg['field_ds']]
    S1, S2, conf, nsim = float(cfg['S1']), float(cfg['S2']), float(cfg['confidence']), int(cfg['nsim'])
    registry = ConstantsRegistry.from_config(cfg.get('pickands'), cfg.get('piterbarg'))
    cc, w = c * d0 ** (-beta / a0), d0 ** (1 / a0) * S1
    try:
        registry.windowed_constant('piterbarg', a0, w, beta, cc)
    except HypothesisError:  # estimate the drift-window constant on the field's time grid
        spec = ConstantSpec('piterbarg', a0, beta, cc, S=w, delta=w / (int(cfg['grid_t']) - 1), nsim=nsim,
                            seeds=SeedSpec(int(cfg['seed']), stream=2, block=int(cfg['block'])), threads=threads)
        est = estimate_windowed(spec)
        LOGGER.info(f'{colorstr("field: ")}{est}')
        registry.add_windowed(est)
    rows, constants, thm32 = [], {}, []
    for u in cfg['u']:
        dt = Profile()
        with dt:
            stat = field_statistic(cfg, u, threads)
        k = int((stat > u).sum())
        lo, hi = binomial_interval(k, nsim, conf)
        asym = thm31_field_tail(a0, beta, c, d0, alphas, ds, S1, S2, u, registry=registry)
        constants.update(asym.constants)
        row = dict(scenario=sid, u=u, phat=k / nsim, ci_lo=lo, ci_hi=hi, asymptotic=asym.value,
                   ratio=k / nsim / asym.value, regime=asym.regime, nsim=nsim, walltime_ms=dt.dt * 1e3)
        logger.log_row(**row)
        rows.append(row)
        LOGGER.info(f'{sid}: u={u:g} phat={k / nsim:.4g} | {asym}')
        if cfg.get('volume') is not None:
            v = thm32_field_tail(float(cfg['volume']), a0, beta, c, d0, alphas, ds, S1, u, registry=registry)
            constants.update(v.constants)
            thm32.append({'u': u, 'value': v.value, 'regime': v.regime})
    info = {'regime': rows[0]['regime'] if rows else '', 'flags': [],
            'constants': {k: list(v) for k, v in constants.items()}}
    if thm32:
        info['thm32'] = thm32
    return rows, info


def run(
        subcommand='compare',  # one of SUBCOMMANDS
        config='',  # scenario.yaml path or name under data/scenarios
        seed=None,  # master seed, overrides the config
        nsim=None,  # replications, overrides the config
        out='',  # CSV path, default runs/<subcommand>/exp/results.csv
        threads=None,  # worker threads, default CHI_EXTREMES_THREADS or NUM_THREADS
        confidence=None,  # confidence level of the intervals
        json=False,  # write summary.json next to the CSV
        project=ROOT / 'runs',  # save to project/subcommand/name
        name='exp',  # save to project/subcommand/name
        exist_ok=False,  # existing project/name ok, do not increment
):
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand '{subcommand}', choose from {list(SUBCOMMANDS)}")
    cfg = load_config(config, seed=seed, nsim=nsim, confidence=confidence)
    kind = SUBCOMMANDS[subcommand]
    if cfg.get('scenario') not in (None, kind):
        raise ConfigError(f"scenario '{cfg['scenario']}' cannot run as {subcommand} (expects {kind})")
    cfg['scenario'] = kind
    threads = resolve_threads(threads)
    sid = Path(config).stem if config else kind

    # Directories
    if out:
        file = Path(out)
        save_dir = file.parent
        save_dir.mkdir(parents=True, exist_ok=True)
    else:
        save_dir = increment_path(Path(project) / subcommand / name, exist_ok=exist_ok, mkdir=True)
        file = save_dir / 'results.csv'
    yaml_save(save_dir / 'opt.yaml', {**cfg, 'subcommand': subcommand, 'threads': threads})

    with ReportLogger(file, summary=json) as logger:
        logger.update(scenario=sid, subcommand=subcommand, seed=cfg['seed'], nsim=cfg['nsim'])
        if kind == 'tail-vs-asymptotic':
            rows, info = run_tail(cfg, sid, logger, threads, simulate=subcommand != 'eval-asymptotics',
                                  evaluate=subcommand != 'simulate-tail')
        elif kind == 'constant-ladder':
            rows, info = run_constants(cfg, sid, logger, threads)
        elif kind == 'expansion-check':
            rows, info = run_expansion(cfg, sid, logger)
        else:
            rows, info = run_field(cfg, sid, logger, threads)
        logger.update(**info)
    return rows, info


def parse_opt(known=False):
    parser = argparse.ArgumentParser()
    parser.add_argument('subcommand', choices=list(SUBCOMMANDS), help='experiment to run')
    parser.add_argument('--config', type=str, default='', help='scenario.yaml path')
    parser.add_argument('--seed', type=int, default=None, help='master seed')
    parser.add_argument('--nsim', type=int, default=None, help='Monte Carlo replications')
    parser.add_argument('--out', type=str, default='', help='CSV output path')
    parser.add_argument('--threads', type=int, default=None, help='worker threads')
    parser.add_argument('--confidence', type=float, default=None, help='confidence level of the intervals')
    parser.add_argument('--json', action='store_true', help='write summary.json')
    parser.add_argument('--project', default=ROOT / 'runs', help='save to project/subcommand/name')
    parser.add_argument('--name', default='exp', help='save to project/subcommand/name')
    parser.add_argument('--exist-ok', action='store_true', help='existing project/name ok, do not increment')
    opt = parser.parse_known_args()[0] if known else parser.parse_args()
    print_args(vars(opt))
    return opt


def main(opt):
    try:
        run(**vars(opt))
    except (ConfigError, HypothesisError, SamplerError) as e:
        LOGGER.error(f'{colorstr("red", "bold", type(e).__name__)}: {e}')
        sys.exit(e.exit_code)


if __name__ == "__main__":
    opt = parse_opt()
    main(opt)
