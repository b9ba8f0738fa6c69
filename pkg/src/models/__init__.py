# Data models and run configuration for the Beamsight workbench
