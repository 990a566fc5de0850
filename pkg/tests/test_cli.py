"""End-to-end runs of the catlab subcommands on small configs."""

import argparse
import json

import pytest

from src.cli import build_parser, main
from src.commands.common import progress
from src.utils.io_utils import read_csv, read_json


def _write_config(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _run(tmp_path, *argv):
    return main([*argv, '--out', str(tmp_path / 'runs'), '--no-progress'])


def _outputs(tmp_path, pattern):
    return sorted((tmp_path / 'runs').glob(pattern))


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv('CATLAB_SEED', raising=False)


class TestParser:

    def test_every_subcommand_has_common_flags(self):
        parser = build_parser()
        for name in ('verify-constructions', 'lengen-sweep', 'lcat-phase', 'gen-tasks', 'sc-demo', 'audit'):
            args = parser.parse_args([name, '--seed', '3', '-j', '2'])
            assert args.seed == 3 and args.jobs == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['train'])

    def test_progress_helper(self):
        args = argparse.Namespace(no_progress=True)
        assert list(progress(range(3), args, desc="items")) == [0, 1, 2]
        bar = progress(None, args, total=2, desc="blocks")
        assert bar.total == 2 and bar.disable
        bar.close()


class TestCommands:

    def test_sc_demo(self, tmp_path, capsys):
        assert _run(tmp_path, 'sc-demo', '--variant', 'window') == 0
        assert '⊥' in capsys.readouterr().out
        manifest = read_json(str(_outputs(tmp_path, 'manifest.sc-demo.*.json')[0]))
        assert manifest['status'] == 'ok'
        assert manifest['config']['variant'] == 'window'

    def test_gen_tasks_is_reproducible(self, tmp_path):
        cfg = _write_config(tmp_path, 'tasks.json', {
            'kind': 'MQAR', 'L': 32, 'k': 4, 'vocab_size': 16, 'n_train': 20, 'n_test': 5, 'seed': 2})
        assert _run(tmp_path, 'gen-tasks', '-c', cfg) == 0
        train = _outputs(tmp_path, 'tasks.train.*.jsonl')
        first = train[0].read_bytes()
        assert len(first.splitlines()) == 20
        assert _run(tmp_path, 'gen-tasks', '-c', cfg) == 0
        assert _outputs(tmp_path, 'tasks.train.*.jsonl') == train
        assert train[0].read_bytes() == first

    def test_gen_tasks_preset_with_small_splits(self, tmp_path):
        assert _run(tmp_path, 'gen-tasks', '--preset', 'mqar-L64', '--n-train', '3', '--n-test', '2') == 0
        assert len(_outputs(tmp_path, 'tasks.test.*.jsonl')[0].read_text().splitlines()) == 2

    def test_unknown_preset(self, tmp_path):
        assert _run(tmp_path, 'gen-tasks', '--preset', 'mqar-L1') == 1

    def test_verify_constructions(self, tmp_path):
        cfg = _write_config(tmp_path, 'verify.json', {
            'vocab_size': 16, 'nar_orders': [1, 2], 'lengths': [16, 32], 'instances': 20,
            'temperature_length': 32, 'sc_signal_sizes': [4], 'sc_max_signals': 4,
            'sc_max_noise': 20, 'sc_instances': 20})
        assert _run(tmp_path, 'verify-constructions', '-c', cfg) == 0
        rows = read_csv(str(_outputs(tmp_path, 'verify_constructions.*.csv')[0]))
        assert {r['suite'] for r in rows} == {'nar', 'ar', 'temperature', 'selective_copy'}
        assert all(r['passed'] == 'true' for r in rows)

    def test_verify_rejects_parallel_signatures(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, 'verify.json', {
            'vocab_size': 16, 'nar_orders': [2], 'lengths': [16], 'instances': 5, 'f_q': [1.0, 1.0]})
        assert _run(tmp_path, 'verify-constructions', '-c', cfg) == 1
        assert 'SignatureNotUnique' in capsys.readouterr().out

    def test_lengen_sweep_negative_control(self, tmp_path):
        cfg = _write_config(tmp_path, 'lengen.json', {
            'build_length': 16, 'lengths': [16, 32], 'suite_size': 10, 'vocab_size': 16})
        assert _run(tmp_path, 'lengen-sweep', '-c', cfg, '--model', 'corrupted') == 0
        rows = read_csv(str(_outputs(tmp_path, 'lengen_sweep.*.csv')[0]))
        assert list(rows[0]) == ['L_prime', 'max_error', 'accuracy']
        assert [r['accuracy'] for r in rows] == ['0', '0']

    def test_audit_perturbed(self, tmp_path):
        cfg = _write_config(tmp_path, 'audit.json', {
            'model': 'perturbed', 'eta': 0.01, 'L': 32, 'lengths': [32, 64], 'suite_size': 10,
            'vocab_size': 16})
        assert _run(tmp_path, 'audit', '-c', cfg) == 0
        report = read_json(str(_outputs(tmp_path, 'audit.perturbed.*.json')[0]))
        assert report['report']['in_regime'] is True
        assert all(report['checks'].values())
        curve = read_csv(str(_outputs(tmp_path, 'audit_curve.perturbed.*.csv')[0]))
        assert list(curve[0]) == ['L_prime', 'max_error', 'accuracy']
        assert [r['L_prime'] for r in curve] == ['32', '64']

    def test_lcat_phase(self, tmp_path):
        cfg = _write_config(tmp_path, 'phase.json', {'L': 4096, 'block_sizes': [16, 64], 'trials': 200})
        assert _run(tmp_path, 'lcat-phase', '-c', cfg) == 0
        rows = read_csv(str(_outputs(tmp_path, 'lcat_phase.*.csv')[0]))
        assert list(rows[0]) == ['B', 'L', 'sigma2', 'filter_kind', 'd_10', 'd_50', 'd_90', 'd_theory', 'trials']
        assert [r['B'] for r in rows] == ['16', '64']

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, 'bad.json', {'signal_size': 8, 'signals': 4})
        assert _run(tmp_path, 'sc-demo', '-c', cfg) == 1
        assert 'InvalidConfig' in capsys.readouterr().out

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv('CATLAB_SEED', '17')
        cfg = _write_config(tmp_path, 'sc.json', {'seed': 1, 'instances': 1})
        assert _run(tmp_path, 'sc-demo', '-c', cfg) == 0
        manifest = read_json(str(_outputs(tmp_path, 'manifest.sc-demo.*.json')[0]))
        assert manifest['config']['seed'] == 17
