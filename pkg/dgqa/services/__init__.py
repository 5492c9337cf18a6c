"""Domain services: distortion synthesis, features, models, selection, evaluation and orchestration."""
