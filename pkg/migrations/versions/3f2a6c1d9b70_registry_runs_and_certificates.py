"""Registro de corridas: tablas runs y certificates

Revision ID: 3f2a6c1d9b70
Revises: 
Create Date: 2026-10-12 10:14:02.318551

"""
from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision = '3f2a6c1d9b70'
down_revision = None
branch_labels = None
depends_on = None


def upgrade():
    op.create_table('runs',
    sa.Column('uuid', sa.String(length=36), nullable=False),
    sa.Column('experiment', sa.String(length=20), nullable=False),
    sa.Column('config_hash', sa.String(length=64), nullable=False),
    sa.Column('seed', sa.BigInteger(), nullable=False),
    sa.Column('threads', sa.Integer(), nullable=False),
    sa.Column('exit_code', sa.Integer(), nullable=True),
    sa.Column('output_dir', sa.String(length=500), nullable=False),
    sa.Column('manifest_path', sa.String(length=500), nullable=True),
    sa.Column('summary', sa.JSON(), nullable=True),
    sa.Column('started_at', sa.DateTime(), nullable=False),
    sa.Column('finished_at', sa.DateTime(), nullable=True),
    sa.Column('elapsed_seconds', sa.Float(), nullable=True),
    sa.PrimaryKeyConstraint('uuid')
    )
    with op.batch_alter_table('runs', schema=None) as batch_op:
        batch_op.create_index(batch_op.f('ix_runs_experiment'), ['experiment'], unique=False)
        batch_op.create_index(batch_op.f('ix_runs_config_hash'), ['config_hash'], unique=False)

    op.create_table('certificates',
    sa.Column('id', sa.Integer(), autoincrement=True, nullable=False),
    sa.Column('run_uuid', sa.String(length=36), nullable=False),
    sa.Column('assumption', sa.String(length=20), nullable=False),
    sa.Column('verdict', sa.String(length=20), nullable=False),
    sa.Column('margin', sa.Float(), nullable=True),
    sa.Column('constants', sa.JSON(), nullable=False),
    sa.Column('empirical_flags', sa.JSON(), nullable=False),
    sa.ForeignKeyConstraint(['run_uuid'], ['runs.uuid'], ondelete='CASCADE'),
    sa.PrimaryKeyConstraint('id'),
    sa.UniqueConstraint('run_uuid', 'assumption', name='unique_run_assumption')
    )
    with op.batch_alter_table('certificates', schema=None) as batch_op:
        batch_op.create_index(batch_op.f('ix_certificates_run_uuid'), ['run_uuid'], unique=False)


def downgrade():
    with op.batch_alter_table('certificates', schema=None) as batch_op:
        batch_op.drop_index(batch_op.f('ix_certificates_run_uuid'))

    op.drop_table('certificates')
    with op.batch_alter_table('runs', schema=None) as batch_op:
        batch_op.drop_index(batch_op.f('ix_runs_config_hash'))
        batch_op.drop_index(batch_op.f('ix_runs_experiment'))

    op.drop_table('runs')
