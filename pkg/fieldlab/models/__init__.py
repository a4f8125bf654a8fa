# Archivo __init__.py para el módulo models
from .run import RunRecord
from .certificate import CertificateRecord

__all__ = ['RunRecord', 'CertificateRecord']
