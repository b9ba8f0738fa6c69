# Metrics and on-disk formats for the Beamsight workbench
