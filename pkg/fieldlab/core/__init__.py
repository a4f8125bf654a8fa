# Núcleo numérico del laboratorio: no depende de Flask
