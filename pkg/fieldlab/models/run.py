import uuid
from datetime import datetime

from fieldlab.extensions import db


class RunRecord(db.Model):
    """Corrida registrada de un experimento"""
    __tablename__ = 'runs'

    # Clave primaria usando UUID
    uuid = db.Column(db.String(36), primary_key=True, default=lambda: str(uuid.uuid4()))

    # Experimento y reproducibilidad
    experiment = db.Column(db.String(20), nullable=False, index=True)
    config_hash = db.Column(db.String(64), nullable=False, index=True)
    seed = db.Column(db.BigInteger, nullable=False)
    threads = db.Column(db.Integer, nullable=False, default=1)

    # Resultado
    exit_code = db.Column(db.Integer, nullable=True)
    output_dir = db.Column(db.String(500), nullable=False)
    manifest_path = db.Column(db.String(500), nullable=True)
    summary = db.Column(db.JSON, nullable=True)

    # Timestamps
    started_at = db.Column(db.DateTime, default=datetime.utcnow, nullable=False)
    finished_at = db.Column(db.DateTime, nullable=True)
    elapsed_seconds = db.Column(db.Float, nullable=True)

    # Relación con los certificados evaluados
    certificates = db.relationship(
        'CertificateRecord', back_populates='run', cascade='all, delete-orphan',
        order_by='CertificateRecord.assumption',
    )

    def __repr__(self):
        return f'<RunRecord {self.uuid} {self.experiment}>'

    def to_dict(self, include_certificates=False):
        """Convertir la corrida a diccionario"""
        data = {
            'uuid': str(self.uuid),
            'experiment': self.experiment,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'threads': self.threads,
            'exit_code': self.exit_code,
            'output_dir': self.output_dir,
            'manifest_path': self.manifest_path,
            'summary': self.summary,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
            'elapsed_seconds': self.elapsed_seconds,
        }
        if include_certificates:
            data['certificates'] = [c.to_dict() for c in self.certificates]
        return data
