"""Tests for experiment configs and run artifacts."""

import argparse
import json

import pytest

import src.config as config_module
from src.commands.common import load_config
from src.config import (
    AuditConfig,
    GenTasksConfig,
    LcatPhaseConfig,
    VerifyConstructionsConfig,
    get_seed,
    validate_config,
)
from src.core.errors import InvalidConfig
from src.utils.io_utils import (
    RunManifest,
    compute_run_id,
    format_cell,
    output_path,
    read_csv,
    read_jsonl,
    write_csv,
    write_jsonl,
)


def _args(**kwargs):
    defaults = dict(config=None, seed=None, out=None, jobs=None, no_progress=True)
    defaults.update(kwargs)
    return argparse.Namespace(**defaults)


class TestExperimentConfig:

    def test_defaults_are_valid(self):
        for cls in (VerifyConstructionsConfig, LcatPhaseConfig, GenTasksConfig, AuditConfig):
            cls.load(None)

    def test_unknown_key(self):
        with pytest.raises(InvalidConfig) as exc:
            LcatPhaseConfig.from_dict({'L': 1024, 'block_size': 16})
        assert 'block_size' in str(exc.value)

    def test_bad_value(self):
        with pytest.raises(InvalidConfig):
            LcatPhaseConfig.from_dict({'L': 1024, 'block_sizes': [2048]})
        with pytest.raises(InvalidConfig):
            LcatPhaseConfig.from_dict({'L': 2 ** 20, 'sim_mode': 'full'})

    @pytest.mark.parametrize("doc", [
        {'trials': '1000'},
        {'trials': 10.5},
        {'trials': True},
        {'block_sizes': 16},
        {'block_sizes': [16, '64']},
        {'sigma2': 'one'},
        {'filter_kind': 1},
    ])
    def test_wrong_value_type(self, doc):
        with pytest.raises(InvalidConfig) as exc:
            LcatPhaseConfig.from_dict({'L': 4096, **doc})
        assert next(iter(doc)) in str(exc.value)

    def test_numeric_widening_and_optionals(self):
        assert LcatPhaseConfig.from_dict({'L': 4096, 'block_sizes': [16], 'sigma2': 2}).sigma2 == 2
        assert VerifyConstructionsConfig.from_dict({'f_q': [2, 1.0], 'nar_orders': [2]}).f_q == [2, 1.0]
        assert VerifyConstructionsConfig.from_dict({'f_q': None}).f_q is None
        with pytest.raises(InvalidConfig):
            GenTasksConfig.from_dict({'preset': 3})

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidConfig):
            AuditConfig.load(str(tmp_path / 'absent.json'))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"seed": ')
        with pytest.raises(InvalidConfig):
            AuditConfig.load(str(path))

    def test_explicit_query_filter_fixes_order(self):
        with pytest.raises(InvalidConfig):
            VerifyConstructionsConfig.from_dict({'f_q': [1.0, 1.0], 'nar_orders': [3]})

    def test_environment_validates(self):
        assert validate_config()

    def test_non_integer_env_seed_rejected(self, monkeypatch):
        monkeypatch.setattr(config_module, 'CATLAB_SEED', 'abc')
        with pytest.raises(ValueError, match="CATLAB_SEED"):
            config_module.validate_config()


class TestSeedPrecedence:

    def test_env_overrides_document(self, monkeypatch):
        monkeypatch.setenv('CATLAB_SEED', '42')
        assert get_seed(7) == 42

    def test_document_when_env_unset(self, monkeypatch):
        monkeypatch.delenv('CATLAB_SEED', raising=False)
        assert get_seed(7) == 7

    def test_flag_overrides_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv('CATLAB_SEED', '42')
        path = tmp_path / 'cfg.json'
        path.write_text(json.dumps({'seed': 3}))
        assert load_config(AuditConfig, _args(config=str(path))).seed == 42
        assert load_config(AuditConfig, _args(config=str(path), seed=5)).seed == 5

    def test_overrides_are_validated(self, monkeypatch):
        monkeypatch.delenv('CATLAB_SEED', raising=False)
        with pytest.raises(InvalidConfig):
            load_config(AuditConfig, _args(jobs=0))


class TestRunArtifacts:

    def test_run_id_ignores_key_order(self):
        a = compute_run_id({'x': 1, 'y': [1, 2]}, 'audit')
        b = compute_run_id({'y': [1, 2], 'x': 1}, 'audit')
        assert a == b
        assert compute_run_id({'x': 1, 'y': [1, 2]}, 'lcat-phase') != a

    def test_output_path(self):
        assert output_path('runs', 'phase', 'abcdef0123456789', 'csv').endswith('phase.abcdef012345.csv')

    def test_cell_format(self):
        assert format_cell(None) == ''
        assert format_cell(True) == 'true'
        assert format_cell(0.1) == '0.1'
        assert format_cell(1 / 3) == '0.3333333333'
        assert format_cell(16) == '16'

    def test_csv_uses_lf(self, tmp_path):
        path = tmp_path / 'out.csv'
        write_csv(str(path), ['B', 'd_50'], [[16, 120], [32, None]])
        assert path.read_bytes() == b'B,d_50\n16,120\n32,\n'
        assert read_csv(str(path))[1] == {'B': '32', 'd_50': ''}

    def test_csv_width_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(str(tmp_path / 'out.csv'), ['a', 'b'], [[1]])

    def test_jsonl_is_compact_and_sorted(self, tmp_path):
        path = tmp_path / 'out.jsonl'
        assert write_jsonl(str(path), [{'b': 1, 'a': [2, 3]}]) == 1
        assert path.read_text() == '{"a":[2,3],"b":1}\n'
        assert read_jsonl(str(path)) == [{'a': [2, 3], 'b': 1}]

    def test_manifest(self, tmp_path):
        manifest = RunManifest(command='audit', config={'seed': 1})
        good = manifest.path_for(str(tmp_path), 'audit', 'json')
        with open(good, 'w') as f:
            f.write('{}')
        manifest.add_output('report', good)
        manifest.add_output('other', str(tmp_path / 'elsewhere.json'))
        assert manifest.missing_outputs() == [str(tmp_path / 'elsewhere.json')]

        manifest.finish(True)
        saved = RunManifest.load(manifest.save(str(tmp_path)))
        assert saved.status == 'ok'
        assert saved.run_id == manifest.run_id
