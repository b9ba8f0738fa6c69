# Training and few-shot evaluation for the Beamsight workbench
