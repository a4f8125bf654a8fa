# Comandos de línea de comandos registrados como blueprints
