# Autodiff, optimizer and beam-prediction models for the Beamsight workbench
