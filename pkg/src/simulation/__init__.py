# Scene, channel and dataset simulation for the Beamsight workbench
