import json
import os
import time
import uuid
from datetime import datetime, timezone

import click
from flask import Blueprint, current_app

from fieldlab import __version__
from fieldlab.artifacts import ArtifactWriter, dumps
from fieldlab.errors import ConfigurationError
from fieldlab.experiments import EXIT_ERROR, run_experiment, settings_from, validate_run
from fieldlab.extensions import db
from fieldlab.models import CertificateRecord, RunRecord
from fieldlab.runconfig import RunConfig, finite_or_none
from fieldlab.validation import handle_lab_errors, is_valid_config_path, is_valid_threads

# Blueprint sin grupo: los comandos quedan en el nivel superior (`manage.py run ...`)
lab_bp = Blueprint('lab', __name__, cli_group=None)


def _load(config_path, seed=None, output_dir=None, threads=None):
    ok, message = is_valid_config_path(config_path)
    if not ok:
        raise ConfigurationError(message, key='config')
    ok, message = is_valid_threads(threads)
    if not ok:
        raise ConfigurationError(message, key='threads')
    return RunConfig.load(config_path).with_overrides(seed=seed, output_dir=output_dir, threads=threads)


def _output_dir(run, run_uuid):
    if run.output_dir:
        return run.output_dir
    stamp = datetime.now().strftime('%Y%m%d-%H%M%S')
    return os.path.join(current_app.config['OUTPUT_ROOT'], f'{run.experiment}-{stamp}-{run_uuid[:8]}')


def record_run(run_uuid, run, output_dir, manifest_path, started_at, elapsed, exit_code, outcome=None):
    """
    Guardar la corrida y sus certificados en el registro

    Un fallo del registro nunca cambia el código de salida del experimento.
    """
    try:
        record = RunRecord(
            uuid=run_uuid,
            experiment=run.experiment,
            config_hash=run.config_hash,
            seed=run.seed,
            threads=int(run.threads or current_app.config['DEFAULT_THREADS']),
            exit_code=exit_code,
            output_dir=os.path.abspath(output_dir),
            manifest_path=manifest_path,
            summary=_json_safe(outcome.summary) if outcome else None,
            started_at=started_at.replace(tzinfo=None),
            finished_at=datetime.now(timezone.utc).replace(tzinfo=None),
            elapsed_seconds=elapsed,
        )
        for cert in (outcome.certificates if outcome else []):
            record.certificates.append(CertificateRecord(
                assumption=cert.assumption,
                verdict=cert.verdict,
                margin=finite_or_none(cert.margin),
                constants=_json_safe(cert.constants),
                empirical_flags=list(cert.empirical_flags),
            ))
        db.session.add(record)
        db.session.commit()
        return record
    except Exception as e:
        db.session.rollback()
        current_app.logger.warning(f"Error al registrar la corrida {run_uuid}: {str(e)}")
        return None


def _json_safe(data):
    return json.loads(dumps(data))


@lab_bp.cli.command('run')
@click.argument('config_path')
@click.option('--seed', type=int, default=None, help='Semilla maestra (sobrescribe la configuración)')
@click.option('--output-dir', default=None, help='Directorio de artefactos')
@click.option('--threads', type=int, default=None, help='Hilos para los ensambles')
@handle_lab_errors
def run(config_path, seed, output_dir, threads):
    """
    Ejecutar un experimento a partir de una configuración o un manifiesto

    Códigos de salida: 0 éxito, 1 error, 2 certificado de la compuerta fallido.
    """
    run_config = _load(config_path, seed, output_dir, threads)
    run_uuid = str(uuid.uuid4())
    target = _output_dir(run_config, run_uuid)
    writer = ArtifactWriter(target)
    started_at = datetime.now(timezone.utc)
    clock = time.perf_counter()
    outcome = None
    try:
        outcome = run_experiment(run_config, writer, settings_from(current_app.config))
        exit_code = outcome.exit_code
    except Exception:
        elapsed = time.perf_counter() - clock
        manifest = writer.write_manifest(
            run_config.resolved(), run_config.experiment, __version__, started_at, elapsed, EXIT_ERROR,
            extra={'run_uuid': run_uuid},
        )
        record_run(run_uuid, run_config, target, manifest, started_at, elapsed, EXIT_ERROR)
        raise
    elapsed = time.perf_counter() - clock
    manifest = writer.write_manifest(
        run_config.resolved(), run_config.experiment, __version__, started_at, elapsed, exit_code,
        extra={'run_uuid': run_uuid, 'summary': outcome.summary},
    )
    record_run(run_uuid, run_config, target, manifest, started_at, elapsed, exit_code, outcome)
    click.echo(dumps({
        'run_uuid': run_uuid, 'experiment': run_config.experiment, 'exit_code': exit_code,
        'output_dir': os.path.abspath(target), 'summary': outcome.summary,
    }))
    current_app.logger.info(f"Corrida {run_uuid} terminada con código {exit_code} en {elapsed:.2f} s")
    return exit_code


@lab_bp.cli.command('validate')
@click.argument('config_path')
@handle_lab_errors
def validate(config_path):
    """Validar una configuración sin simular (restricciones, casos y certificados)"""
    run_config = _load(config_path)
    report = validate_run(run_config, settings_from(current_app.config))
    click.echo(dumps(report))
    return 0
