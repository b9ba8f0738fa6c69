# Command-line interface for the Beamsight workbench
