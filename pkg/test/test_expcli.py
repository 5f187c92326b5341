# test_expcli.py

import json
import sys

import numpy as np
import pytest

from errors import ConfigError
from expcli import (
    _apply_overrides, build_parser, build_tasks, dump_config, load_config, main, parse_config,
    read_csv, sample_channels, write_csv, write_rows,
)
from models import CSV_HEADER, ExperimentConfig, ResultRow, Termination


def _write(tmp_path, data, name='cfg.json'):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return path


def _row(**kw) -> ResultRow:
    base = dict(scenario='single_run', L=5e4, G_scale=1.0, scheme='joint', iteration=3,
                t=(0.1234567890123456,), f=(2.5e7,), p=(0.3333333333333333,), ce=4.56e5,
                outer_iters=3, termination=Termination.RESIDUAL_CONVERGED)
    base.update(kw)
    return ResultRow(**base)


# ===== 設定檔 =====

def test_minimal_config_gets_reference_defaults(tmp_path):
    """只有 scenario 的設定檔套用參考參數"""
    cfg = load_config(_write(tmp_path, {'scenario': 'single_run'}))
    assert cfg.bandwidth_hz == 200e3
    assert cfg.deadline_s == 1.0
    assert len(cfg.users) == 2
    for u in cfg.users:
        assert u.cycles_per_bit == 1000.0
        assert u.eps == 1e-24
        assert u.f_max_hz == 1e9
        assert u.energy_budget_j == 1.0
        assert u.weight == 1.0
    assert [u.H for u in cfg.users] == [7.0, 5.0]


def test_empty_sweep_rejected(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, {'scenario': 'ce_vs_bits', 'sweep': {'L': []}}))
    assert 'sweep.L' in str(info.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config({'scenario': 'single_run', 'bandwith_hz': 1e5})


def test_random_channels_need_seed():
    with pytest.raises(ConfigError):
        parse_config({'scenario': 'single_run', 'channel_mode': 'random'})


def test_json_syntax_error_has_position(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"scenario": "single_run",\n  "seed": }', encoding='utf-8')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert 'line 2' in str(info.value)


def test_config_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, {
        'scenario': 'ce_vs_bits',
        'sweep': {'L': [4e4, 6e4], 'G_scale': [1.0, 3.0]},
        'solver': {'cccp_faithful': True},
    }))
    again = parse_config(json.loads(dump_config(cfg)))
    assert again == cfg


# ===== 通道 =====

def test_deterministic_channels_unchanged():
    cfg = ExperimentConfig(scenario='single_run')
    H, G = sample_channels(cfg)
    assert list(H) == [7.0, 5.0]
    assert list(G) == [1.0, 1.0]


def test_random_channels_are_reproducible():
    cfg = parse_config({'scenario': 'single_run', 'channel_mode': 'random', 'seed': 7})
    H1, G1 = sample_channels(cfg)
    H2, G2 = sample_channels(cfg)
    np.testing.assert_array_equal(H1, H2)
    np.testing.assert_array_equal(G1, G2)
    H3, _ = sample_channels(cfg, seed=8)
    assert not np.array_equal(H1, H3)


def test_random_gains_have_unit_mean():
    """1e5 次抽樣的平均值在 1 的 2% 以內"""
    users = [{'H': 1.0, 'G': 1.0}] * 1000
    cfg = parse_config({'scenario': 'single_run', 'channel_mode': 'random', 'seed': 0, 'users': users})
    draws = []
    for seed in range(50):
        H, G = sample_channels(cfg, seed=seed)
        draws.append(H)
        draws.append(G)
    sample = np.concatenate(draws)
    assert len(sample) == 100_000
    assert abs(sample.mean() - 1.0) < 0.02


# ===== 掃描任務 =====

def test_build_tasks_order_and_schemes():
    cfg = parse_config({'scenario': 'scheme_compare', 'sweep': {'L': [4e4, 5e4], 'G_scale': [1.0]}})
    tasks = build_tasks(cfg)
    assert [(t[2], t[4]) for t in tasks] == [
        (4e4, 'joint'), (4e4, 'local_only'), (4e4, 'offload_only'),
        (5e4, 'joint'), (5e4, 'local_only'), (5e4, 'offload_only'),
    ]
    single = build_tasks(ExperimentConfig(scenario='single_run'))
    assert len(single) == 1 and single[0][2] is None
    oracle = build_tasks(cfg, oracle_grid=31)
    assert {t[4] for t in oracle} == {'oracle'}
    assert all(t[6] == 31 for t in oracle)


# ===== CSV =====

def test_write_csv_single_row(tmp_path):
    path = tmp_path / 'out' / 'one.csv'
    write_csv([_row()], path)
    lines = path.read_text(encoding='utf-8').splitlines()
    assert len(lines) == 2
    assert lines[0] == ','.join(CSV_HEADER)
    assert lines[0] == 'scenario,L,G_scale,scheme,user,iter,t_s,f_hz,p_w,ce_bits_per_joule,outer_iters,termination'


def test_csv_round_trip_is_exact(tmp_path):
    """寫入再讀回數值完全相同"""
    row = _row()
    path = tmp_path / 'rt.csv'
    write_csv([row], path)
    rec = read_csv(path)[0]
    assert rec['t_s'] == row.t[0]
    assert rec['f_hz'] == row.f[0]
    assert rec['p_w'] == row.p[0]
    assert rec['ce_bits_per_joule'] == row.ce
    assert rec['termination'] == 'ResidualConverged'
    assert rec['user'] == 0 and rec['iter'] == 3


def test_write_csv_one_line_per_user(tmp_path, capsys):
    row = _row(t=(0.1, 0.2), f=(1e7, 2e7), p=(0.3, 0.4))
    write_rows([row], sys.stdout)
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3
    assert out[1].split(',')[4] == '0' and out[2].split(',')[4] == '1'


def test_failed_rows_write_nan(tmp_path):
    row = _row(t=(float('nan'),), f=(float('nan'),), p=(float('nan'),), ce=0.0,
               termination=Termination.INFEASIBLE)
    path = tmp_path / 'nan.csv'
    write_csv([row], path)
    line = path.read_text(encoding='utf-8').splitlines()[1]
    assert ',nan,nan,nan,' in line
    assert line.endswith('Infeasible')


def test_write_csv_needs_rows(tmp_path):
    with pytest.raises(ValueError):
        write_csv([], tmp_path / 'empty.csv')


# ===== 命令列 =====

def test_main_config_error_exit_code(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{"scenario": "nope"}', encoding='utf-8')
    assert main(['solve', str(path)]) == 2


def test_main_missing_file_exit_code(tmp_path):
    assert main(['sweep', str(tmp_path / 'missing.json')]) == 2


def test_main_single_run_writes_csv(tmp_path):
    """solve 指令成功時回傳 0"""
    cfg = _write(tmp_path, {'scenario': 'single_run', 'solver': {'cccp_faithful': True}})
    out = tmp_path / 'single.csv'
    assert main(['solve', str(cfg), '--out', str(out)]) == 0
    records = read_csv(out)
    assert len(records) == 2
    assert all(r['scheme'] == 'joint' for r in records)
    assert all(r['ce_bits_per_joule'] > 0 for r in records)


def test_main_reports_infeasible_rows(tmp_path):
    cfg = _write(tmp_path, {
        'scenario': 'ce_vs_bits',
        'sweep': {'L': [1e9]},
        'solver': {'cccp_faithful': True},
    })
    out = tmp_path / 'bad.csv'
    assert main(['sweep', str(cfg), '--out', str(out)]) == 1
    assert all(r['termination'] == 'Infeasible' for r in read_csv(out))


def test_main_unwritable_output_exit_code(tmp_path):
    """結果檔無法寫出時回傳 3，不拋出例外"""
    cfg = _write(tmp_path, {'scenario': 'single_run', 'solver': {'cccp_faithful': True}})
    blocker = tmp_path / 'blocker'
    blocker.write_text('not a directory', encoding='utf-8')
    out = blocker / 'single.csv'
    assert main(['solve', str(cfg), '--out', str(out)]) == 3
    assert blocker.read_text(encoding='utf-8') == 'not a directory'


def test_starts_override_reaches_solver(tmp_path):
    cfg = _write(tmp_path, {'scenario': 'single_run', 'solver': {'cccp_faithful': True}})
    parsed = _apply_overrides(load_config(cfg), build_parser().parse_args(['solve', str(cfg), '--starts', '3']))
    assert parsed.solver.starts == 3
    assert parsed.solver.cccp_faithful
