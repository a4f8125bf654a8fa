import click
from flask import Blueprint

from fieldlab.artifacts import dumps
from fieldlab.errors import ConfigurationError, FieldLabError
from fieldlab.models import RunRecord
from fieldlab.validation import handle_lab_errors, is_valid_uuid

# Blueprint para consultar el registro de corridas
registry_bp = Blueprint('registry', __name__, cli_group=None)


@registry_bp.cli.command('runs')
@click.option('--limit', type=int, default=20, help='Número máximo de corridas')
@click.option('--experiment', default=None, help='Filtrar por experimento')
@handle_lab_errors
def runs(limit, experiment):
    """Listar las corridas más recientes"""
    query = RunRecord.query
    if experiment:
        query = query.filter_by(experiment=experiment)
    records = query.order_by(RunRecord.started_at.desc()).limit(max(limit, 1)).all()
    for record in records:
        click.echo(
            f"{record.uuid}  {record.experiment:<10} exit={record.exit_code}  "
            f"{record.started_at.isoformat()}  {record.output_dir}"
        )
    if not records:
        click.echo("No hay corridas registradas")
    return 0


@registry_bp.cli.command('show')
@click.argument('run_uuid')
@handle_lab_errors
def show(run_uuid):
    """Mostrar una corrida con sus certificados en JSON"""
    ok, message = is_valid_uuid(run_uuid)
    if not ok:
        raise ConfigurationError(message, key='run_uuid')
    record = RunRecord.query.filter_by(uuid=run_uuid.lower()).first()
    if not record:
        raise FieldLabError(f"Corrida no encontrada: {run_uuid}", run_uuid=run_uuid)
    click.echo(dumps(record.to_dict(include_certificates=True)))
    return 0
