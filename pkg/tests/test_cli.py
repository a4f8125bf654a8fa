import json
from pathlib import Path

import pytest

from config import Config
from fieldlab.experiments import DEFAULT_SETTINGS, SETTING_KEYS, settings_from
from fieldlab.extensions import db
from fieldlab.models import RunRecord

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'
PASS_MARGIN = 2.0 - (2 * 2 ** 0.5 * 0.25 + 0.1)

SMALL_SIMULATE = {
    'experiment': {'type': 'simulate', 'p_list': [2]},
    'seed': 21,
    'space': {'bounds': [[0.0, 1.0]], 'points': 51},
    'kernel': {'variant': 'gaussian', 'params': {'M': 20.0}, 'target_norm': 0.5},
    'activation': {'variant': 'logistic'},
    'noise': {'variant': 'additive', 'basis': 'cosine', 'sigma': [0.2, 0.1]},
    'dynamics': {
        'alpha': 1.0, 'T': 0.5, 'dt': 0.05, 'n_paths': 20,
        'initial': {'type': 'constant', 'value': 0.5},
    },
}


def read_json(path):
    return json.loads(Path(path).read_text(encoding='utf-8'))


def file_hashes(manifest):
    return {entry['name']: entry['sha256'] for entry in manifest['files']}


def certify_config(**changes):
    data = json.loads((CONFIGS / 'certify_pass.json').read_text(encoding='utf-8'))
    for section, values in changes.items():
        data[section] = dict(data[section], **values)
    return data


class TestRun:
    def test_certify_pass(self, app, runner, tmp_path):
        out = tmp_path / 'pass'
        result = runner.invoke(args=['run', str(CONFIGS / 'certify_pass.json'), '--output-dir', str(out)])
        assert result.exit_code == 0
        cert = read_json(out / 'certificate_ergodicity.json')
        assert cert['verdict'] == 'pass'
        assert cert['margin'] == pytest.approx(PASS_MARGIN, abs=1e-6)
        manifest = read_json(out / 'manifest.json')
        assert manifest['exit_code'] == 0
        record = db.session.get(RunRecord, manifest['run_uuid'])
        assert record.experiment == 'certify'
        assert {c.assumption for c in record.certificates} == {'invariance', 'ergodicity', 'monotone'}

    def test_certify_fail_exits_with_two(self, app, runner, tmp_path):
        out = tmp_path / 'fail'
        result = runner.invoke(args=['run', str(CONFIGS / 'certify_fail.json'), '--output-dir', str(out)])
        assert result.exit_code == 2
        assert read_json(out / 'certificate_ergodicity.json')['verdict'] == 'fail'
        manifest = read_json(out / 'manifest.json')
        assert manifest['exit_code'] == 2
        assert db.session.get(RunRecord, manifest['run_uuid']).exit_code == 2

    def test_unknown_key_names_the_key(self, runner, write_config):
        data = certify_config(kernel={'bogus': 1})
        result = runner.invoke(args=['run', write_config(data)])
        assert result.exit_code == 1
        assert 'kernel.bogus' in result.output

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(args=['run', str(tmp_path / 'missing.json')])
        assert result.exit_code == 1

    def test_kernel_constraint_writes_error_manifest(self, runner, write_config, tmp_path):
        data = certify_config(kernel={'variant': 'mexican_hat2', 'params': {'A': 0.5, 's': 1.0}})
        out = tmp_path / 'broken'
        result = runner.invoke(args=['run', write_config(data), '--output-dir', str(out)])
        assert result.exit_code == 1
        assert '√2 ≤ s ≤ √2/A' in result.output
        assert read_json(out / 'manifest.json')['exit_code'] == 1

    def test_default_output_dir_under_root(self, app, runner, write_config):
        result = runner.invoke(args=['run', write_config(SMALL_SIMULATE)])
        assert result.exit_code == 0
        manifests = list(Path(app.config['OUTPUT_ROOT']).glob('simulate-*/manifest.json'))
        assert len(manifests) == 1
        assert 'output_dir' not in read_json(manifests[0])['resolved_config']

    def test_manifest_rerun_reproduces_artifacts(self, runner, write_config, tmp_path):
        first, second = tmp_path / 'first', tmp_path / 'second'
        result = runner.invoke(args=['run', write_config(SMALL_SIMULATE), '--output-dir', str(first)])
        assert result.exit_code == 0
        result = runner.invoke(
            args=['run', str(first / 'manifest.json'), '--output-dir', str(second), '--threads', '2']
        )
        assert result.exit_code == 0
        original = file_hashes(read_json(first / 'manifest.json'))
        replay = file_hashes(read_json(second / 'manifest.json'))
        assert original['moments.csv'] == replay['moments.csv']

    def test_seed_override_changes_moments(self, runner, write_config, tmp_path):
        path = write_config(SMALL_SIMULATE)
        runner.invoke(args=['run', path, '--output-dir', str(tmp_path / 'a')])
        runner.invoke(args=['run', path, '--output-dir', str(tmp_path / 'b'), '--seed', '22'])
        a = file_hashes(read_json(tmp_path / 'a' / 'manifest.json'))
        b = file_hashes(read_json(tmp_path / 'b' / 'manifest.json'))
        assert a['moments.csv'] != b['moments.csv']

    def test_invalid_threads(self, runner, write_config):
        result = runner.invoke(args=['run', write_config(SMALL_SIMULATE), '--threads', '0'])
        assert result.exit_code == 1
        assert '--threads' in result.output

    def test_spectrum(self, runner, tmp_path):
        out = tmp_path / 'spectrum'
        result = runner.invoke(args=['run', str(CONFIGS / 'spectrum.json'), '--output-dir', str(out)])
        assert result.exit_code == 0
        assert (out / 'spectrum.csv').exists()
        assert read_json(out / 'definiteness.json')['definiteness'] == 'non_negative'


class TestValidate:
    def test_simulate_config(self, runner):
        result = runner.invoke(args=['validate', str(CONFIGS / 'simulate.json')])
        assert result.exit_code == 0
        assert '"status": "ok"' in result.output
        assert '"grid"' in result.output

    def test_heaviside_rejected_for_certificates(self, runner, write_config):
        data = certify_config(activation={'variant': 'heaviside'})
        result = runner.invoke(args=['validate', write_config(data)])
        assert result.exit_code == 1
        assert 'IneligibleActivationError' in result.output

    def test_invalid_json_reports_position(self, runner, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"experiment": ', encoding='utf-8')
        result = runner.invoke(args=['validate', str(path)])
        assert result.exit_code == 1
        assert 'línea 1' in result.output

    def test_unused_section(self, runner, write_config):
        data = dict(SMALL_SIMULATE, particle={'populations': [10]})
        result = runner.invoke(args=['validate', write_config(data)])
        assert result.exit_code == 1
        assert 'particle' in result.output


class TestRegistry:
    def test_empty_registry(self, runner):
        result = runner.invoke(args=['runs'])
        assert result.exit_code == 0
        assert 'No hay corridas registradas' in result.output

    def test_list_and_show(self, runner, tmp_path):
        out = tmp_path / 'pass'
        runner.invoke(args=['run', str(CONFIGS / 'certify_pass.json'), '--output-dir', str(out)])
        run_uuid = read_json(out / 'manifest.json')['run_uuid']
        listing = runner.invoke(args=['runs', '--experiment', 'certify'])
        assert run_uuid in listing.output
        assert run_uuid not in runner.invoke(args=['runs', '--experiment', 'spectrum']).output
        shown = runner.invoke(args=['show', run_uuid])
        assert shown.exit_code == 0
        assert '"certificates"' in shown.output
        assert '"assumption": "ergodicity"' in shown.output

    def test_show_unknown_run(self, runner):
        result = runner.invoke(args=['show', '00000000-0000-4000-8000-000000000000'])
        assert result.exit_code == 1
        assert 'Corrida no encontrada' in result.output

    def test_show_rejects_malformed_uuid(self, runner):
        result = runner.invoke(args=['show', 'not-a-uuid'])
        assert result.exit_code == 1
        assert 'inválido' in result.output


class TestSettings:
    def test_defaults_come_from_config(self):
        assert DEFAULT_SETTINGS == {key: getattr(Config, key) for key in SETTING_KEYS}

    def test_app_config_overrides_defaults(self, app):
        app.config['RANK_TOL'] = 1e-6
        settings = settings_from(app.config)
        assert settings['RANK_TOL'] == 1e-6
        assert settings['DEFINITENESS_TOL'] == app.config['DEFINITENESS_TOL']

    def test_missing_keys_fall_back_to_config(self):
        assert settings_from({})['ESTIMATION_TRIALS'] == Config.ESTIMATION_TRIALS
