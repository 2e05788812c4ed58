from __future__ import annotations

import pytest

import merk


def test_list(capsys):
    assert merk.main(['list']) == 0
    out = capsys.readouterr().out
    for name in ('MERK2', 'MERK3', 'MERK4', 'MERK5', 'MIS-KW3',
                 'reaction_diffusion', 'brusselator', 'one_directional', 'bi_directional',
                 'Heun2', 'ERK33', 'RK4Classic', 'CashKarp5', 'Order6'):
        assert name in out


def test_list_verbose_shows_groups(capsys):
    assert merk.main(['list', '--verbose']) == 0
    assert 'group 0' in capsys.readouterr().out


def test_no_command_is_usage_error(capsys):
    assert merk.main([]) == 2


@pytest.mark.parametrize('argv', [
    ['converge', '--method', 'MERK9', '--problem', 'brusselator'],
    ['converge', '--method', 'MERK3', '--problem', 'heat'],
    ['list', '--colour'],
])
def test_unknown_flags_and_ids(argv, capsys):
    assert merk.main(argv) == 2


@pytest.mark.parametrize('policy', ['fixed_m:10', 'fixed_m:2.5', 'sometimes:3'])
def test_config_errors_exit_2(policy, capsys):
    argv = ['converge', '--method', 'MERK3', '--problem', 'brusselator', '--policy', policy]
    assert merk.main(argv) == 2
    assert 'Configuration error' in capsys.readouterr().out


def test_converge_writes_csv(tmp_path, capsys):
    out = tmp_path / 'merk3.csv'
    argv = ['converge', '--method', 'MERK3', '--problem', 'one_directional', '--policy', 'fixed_m:10',
            '--h-list', '0.1', '0.05', '0.025', '0.0125', '--out', str(out)]
    assert merk.main(argv) == 0
    assert out.read_text().startswith('method,problem,policy,H,h,m,q,r,')
    assert (tmp_path / 'merk3.meta.txt').exists()
    assert 'Best-fit rate' in capsys.readouterr().out


def test_bare_output_name_goes_to_output_dir(monkeypatch, tmp_path):
    monkeypatch.setattr(merk.Config, 'OUTPUT_DIR', str(tmp_path))
    assert merk.resolve_output('study.csv') == str(tmp_path / 'study.csv')
    assert merk.resolve_output(str(tmp_path / 'x' / 'y.csv')) == str(tmp_path / 'x' / 'y.csv')


@pytest.mark.slow
def test_oracle_check_passes(capsys):
    assert merk.main(['oracle-check']) == 0
    out = capsys.readouterr().out
    assert 'FAIL' not in out
