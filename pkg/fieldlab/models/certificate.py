from fieldlab.extensions import db


class CertificateRecord(db.Model):
    """Certificado evaluado dentro de una corrida"""
    __tablename__ = 'certificates'

    id = db.Column(db.Integer, primary_key=True, autoincrement=True)
    run_uuid = db.Column(db.String(36), db.ForeignKey('runs.uuid', ondelete='CASCADE'), nullable=False, index=True)

    assumption = db.Column(db.String(20), nullable=False)
    verdict = db.Column(db.String(20), nullable=False)
    # margen −∞ se guarda como NULL; el veredicto conserva el resultado
    margin = db.Column(db.Float, nullable=True)
    constants = db.Column(db.JSON, nullable=False)
    empirical_flags = db.Column(db.JSON, nullable=False, default=list)

    run = db.relationship('RunRecord', back_populates='certificates')

    __table_args__ = (
        db.UniqueConstraint('run_uuid', 'assumption', name='unique_run_assumption'),
    )

    def __repr__(self):
        return f'<CertificateRecord {self.assumption} {self.verdict}>'

    def to_dict(self):
        return {
            'assumption': self.assumption,
            'verdict': self.verdict,
            'margin': self.margin,
            'constants': self.constants,
            'empirical_flags': self.empirical_flags,
        }
