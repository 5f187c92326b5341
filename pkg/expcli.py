# expcli.py

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from pydantic import ValidationError

import config as env
from driver import baseline_local_only, baseline_offload_only, brute_force_oracle, run_algorithm1
from errors import ConfigError, InfeasibleInstance, SecureCEError
from models import (
    CSV_HEADER, ExperimentConfig, OracleGrid, ResultRow, SolveReport, Termination,
)

logger = logging.getLogger(__name__)


# ===== 設定檔 =====

def load_config(path) -> ExperimentConfig:
    """
    讀取並驗證 JSON 實驗設定檔

    Raises:
        ConfigError: 無法讀取檔案、JSON 語法錯誤 (附行列位置)，
            或指出欄位名稱的驗證錯誤
    """
    p = Path(path)
    try:
        text = p.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: line {e.lineno} column {e.colno}: {e.msg}")
    return parse_config(data, source=str(p))


def parse_config(data: dict, source: str = '<config>') -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = '; '.join(
            f"{'.'.join(str(x) for x in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}")


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode='json'), indent=2, sort_keys=True)


# ===== 通道 =====

def sample_channels(cfg: ExperimentConfig, seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    每個用戶的有效 (H, G)

    random 模式將每個增益乘上單位複高斯的 |h|^2 (即 Exp(1) 抽樣)；
    先抽完所有 H，再抽所有 G
    """
    H = np.array([u.H for u in cfg.users], dtype=float)
    G = np.array([u.G for u in cfg.users], dtype=float)
    if cfg.channel_mode == 'deterministic':
        return H, G
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    K = len(cfg.users)

    def unit_gain() -> np.ndarray:
        re = rng.standard_normal(K)
        im = rng.standard_normal(K)
        return (re**2 + im**2) / 2.0

    return H * unit_gain(), G * unit_gain()


# ===== 實驗 =====

Task = Tuple[ExperimentConfig, str, Optional[float], float, str, Tuple[Tuple[float, ...], Tuple[float, ...]], int]


def _nan_row(scenario: str, L: float, G_scale: float, scheme: str, K: int, termination: Termination) -> ResultRow:
    nan = (math.nan,) * K
    return ResultRow(scenario=scenario, L=L, G_scale=G_scale, scheme=scheme, iteration=0,
                     t=nan, f=nan, p=nan, ce=0.0, outer_iters=0, termination=termination)


def _report_rows(scenario: str, L: float, G_scale: float, scheme: str, report: SolveReport,
                 per_iteration: bool) -> List[ResultRow]:
    rows = []
    if per_iteration:
        for entry in report.outer_trace:
            rows.append(ResultRow(
                scenario=scenario, L=L, G_scale=G_scale, scheme=scheme, iteration=entry.iteration,
                t=entry.t, f=entry.f, p=entry.p, ce=max(0.0, entry.objective),
                outer_iters=report.outer_iters, termination=report.termination,
            ))
    if report.termination == Termination.INFEASIBLE:
        K = len(report.per_user)
        rows.append(_nan_row(scenario, L, G_scale, scheme, K, report.termination))
        return rows
    rows.append(ResultRow(
        scenario=scenario, L=L, G_scale=G_scale, scheme=scheme, iteration=report.outer_iters,
        t=tuple(u.t for u in report.per_user), f=tuple(u.f for u in report.per_user),
        p=tuple(u.p for u in report.per_user), ce=report.final_ce,
        outer_iters=report.outer_iters, termination=report.termination,
    ))
    return rows


def _run_point(task: Task) -> List[ResultRow]:
    """單一掃描點與方案；求解失敗轉為錯誤列"""
    cfg, scenario, L, G_scale, scheme, channels, grid_n = task
    H, G = (np.array(c) for c in channels)
    params = cfg.to_system_params(L=L, G_scale=G_scale, channels=(H, G))
    row_L = L if L is not None else cfg.users[0].task_bits
    try:
        if scheme == 'joint':
            report = run_algorithm1(params, cfg.tolerances, cfg.solver)
            return _report_rows(scenario, row_L, G_scale, scheme, report, scenario == 'convergence')
        if scheme == 'offload_only':
            report = baseline_offload_only(params, cfg.tolerances, cfg.solver)
            return _report_rows(scenario, row_L, G_scale, scheme, report, False)
        if scheme == 'local_only':
            res = baseline_local_only(params)
            if not all(res.feasible):
                return [_nan_row(scenario, row_L, G_scale, scheme, params.K, Termination.INFEASIBLE)]
            pt = res.point
            return [ResultRow(scenario=scenario, L=row_L, G_scale=G_scale, scheme=scheme, iteration=0,
                              t=pt.t, f=pt.f, p=pt.p, ce=res.total, outer_iters=0,
                              termination=Termination.CLOSED_FORM)]
        if scheme == 'oracle':
            res = brute_force_oracle(params, OracleGrid(n=grid_n))
            pt = res.point
            return [ResultRow(scenario=scenario, L=row_L, G_scale=G_scale, scheme=scheme, iteration=0,
                              t=pt.t, f=pt.f, p=pt.p, ce=res.ce, outer_iters=0,
                              termination=Termination.CLOSED_FORM)]
    except InfeasibleInstance as e:
        logger.warning(f"⚠️  {scheme} at L={row_L:g}, G_scale={G_scale:g}: {e}")
        return [_nan_row(scenario, row_L, G_scale, scheme, params.K, Termination.INFEASIBLE)]
    except SecureCEError as e:
        logger.error(f"❌ {scheme} at L={row_L:g}, G_scale={G_scale:g}: {e}")
        return [_nan_row(scenario, row_L, G_scale, scheme, params.K, Termination.ERROR)]
    raise ConfigError(f"unknown scheme: {scheme}")


def build_tasks(cfg: ExperimentConfig, oracle_grid: Optional[int] = None) -> List[Task]:
    """依輸出順序排列的掃描點"""
    H, G = sample_channels(cfg)
    channels = (tuple(H.tolist()), tuple(G.tolist()))
    n = oracle_grid or OracleGrid().n
    scenario = cfg.scenario

    if scenario == 'single_run':
        points: List[Tuple[Optional[float], float]] = [(None, 1.0)]
    else:
        points = [(L, g) for g in cfg.sweep.G_scale for L in cfg.sweep.L]

    if oracle_grid is not None:
        schemes = ['oracle']
    elif scenario == 'scheme_compare':
        schemes = ['joint', 'local_only', 'offload_only']
    else:
        schemes = ['joint']

    return [(cfg, scenario, L, g, scheme, channels, n) for L, g in points for scheme in schemes]


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                   oracle_grid: Optional[int] = None) -> List[ResultRow]:
    """
    執行情境中的每個掃描點

    workers > 1 時交給有上限的行程池；無論完成順序，
    回傳的列都依輸入順序排列
    """
    tasks = build_tasks(cfg, oracle_grid)
    n_workers = workers if workers is not None else env.MAX_WORKERS
    logger.info(f"running {len(tasks)} point(s) of scenario '{cfg.scenario}' with {n_workers} worker(s)")
    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(_run_point, tasks))
    else:
        chunks = [_run_point(task) for task in tasks]
    return [row for chunk in chunks for row in chunk]


# ===== CSV =====

def _fmt(value: float) -> str:
    if math.isnan(value):
        return 'nan'
    return format(value, '.16e')


def format_rows(rows: Iterable[ResultRow]) -> List[List[str]]:
    lines = []
    for row in rows:
        for k in range(len(row.t)):
            lines.append([
                row.scenario, _fmt(row.L), _fmt(row.G_scale), row.scheme, str(k), str(row.iteration),
                _fmt(row.t[k]), _fmt(row.f[k]), _fmt(row.p[k]), _fmt(row.ce),
                str(row.outer_iters), row.termination.value,
            ])
    return lines


def write_rows(rows: Sequence[ResultRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(CSV_HEADER)
    writer.writerows(format_rows(rows))


def write_csv(rows: Sequence[ResultRow], path) -> None:
    """先寫表頭，再依產生順序每列每個用戶一行"""
    if not rows:
        raise ValueError("write_csv needs at least one row")
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open('w', encoding='utf-8', newline='') as fh:
            write_rows(rows, fh)
    except OSError as e:
        raise OSError(f"cannot write results to {p}: {e}") from e
    logger.info(f"✅ wrote {len(rows)} result row(s) to {p}")


def read_csv(path) -> List[Dict[str, object]]:
    """把結果檔解析回具型別的紀錄"""
    out = []
    with Path(path).open(encoding='utf-8', newline='') as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}: {reader.fieldnames}")
        for rec in reader:
            out.append({
                'scenario': rec['scenario'],
                'L': float(rec['L']),
                'G_scale': float(rec['G_scale']),
                'scheme': rec['scheme'],
                'user': int(rec['user']),
                'iter': int(rec['iter']),
                't_s': float(rec['t_s']),
                'f_hz': float(rec['f_hz']),
                'p_w': float(rec['p_w']),
                'ce_bits_per_joule': float(rec['ce_bits_per_joule']),
                'outer_iters': int(rec['outer_iters']),
                'termination': rec['termination'],
            })
    return out


# ===== 命令列 =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='secure-ce',
        description='Secure computation efficiency maximization for MEC offloading.',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument('config', help='JSON experiment file')
        p.add_argument('--seed', type=int, default=None, help='override the channel seed')
        p.add_argument('--out', default=None, help='CSV output path (default: config output, else stdout)')
        p.add_argument('--workers', type=int, default=None, help='worker processes for sweeps')
        p.add_argument('--strict-paper-T', action='store_true', dest='strict_paper_T',
                       help='use 1 instead of w_k in the multiplier residual')
        p.add_argument('--cccp-faithful', action='store_true', dest='cccp_faithful',
                       help='keep the legitimate entropy term exact in the subproblem')
        p.add_argument('--log2-rates', action='store_true', dest='log2_rates',
                       help='report secure rates in base-2 bits')
        p.add_argument('--cheap-backtrack', action='store_true', dest='cheap_backtrack',
                       help='evaluate multiplier backtracking at the frozen solution')
        p.add_argument('--starts', type=int, default=None,
                       help='solver starts per point; extra starts are drawn from solver.start_seed')
        p.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING, ...')

    common(sub.add_parser('solve', help='single run of the configured system'))
    common(sub.add_parser('sweep', help='run the configured scenario over its sweep grid'))
    oracle = sub.add_parser('oracle', help='brute-force grid search over the sweep grid')
    common(oracle)
    oracle.add_argument('--grid', type=int, default=OracleGrid().n, help='grid points per axis')
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    solver_updates = {name: True for name in ('strict_paper_T', 'cccp_faithful', 'log2_rates', 'cheap_backtrack')
                      if getattr(args, name)}
    data = cfg.model_dump(mode='json')
    data['solver'].update(solver_updates)
    if args.starts is not None:
        data['solver']['starts'] = args.starts
    if args.seed is not None:
        data['seed'] = args.seed
    if args.out is not None:
        data['output'] = args.out
    if args.command == 'solve':
        data['scenario'] = 'single_run'
    return parse_config(data, source='command line')


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令列進入點

    Returns:
        結束碼: 0 成功，1 有列求解失敗，2 設定錯誤，3 無法寫出結果檔
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        env.setup_logging(args.log_level)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.workers is not None and args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
    except ConfigError as e:
        logging.getLogger(__name__).error(f"❌ {e}")
        return 2

    grid = args.grid if args.command == 'oracle' else None
    rows = run_experiment(cfg, workers=args.workers, oracle_grid=grid)
    if cfg.output:
        try:
            write_csv(rows, cfg.output)
        except OSError as e:
            logger.error(f"❌ {e}")
            return 3
    else:
        write_rows(rows, sys.stdout)

    failed = [r for r in rows if r.termination.is_error]
    if failed:
        logger.error(f"❌ {len(failed)} of {len(rows)} row(s) ended with a solver failure")
        return 1
    logger.info(f"✅ {len(rows)} row(s) completed")
    return 0
