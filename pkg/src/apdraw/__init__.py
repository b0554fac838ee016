"""Face photo to portrait line drawing translation toolkit.

Modules:
    config    -- layered TOML configuration with full/toy profiles
    corpus    -- manifests, preprocessing, region masks, batch sampling
    backbones -- adapters for edge/perceptual/feature/embedding backbones
    networks  -- generators, discriminators, style classifier, quality model
    losses    -- loss terms, truncation operator, epoch weight schedule
    ranking   -- preference answers, score aggregation, metric dataset
    styles    -- style interpolation, histogram matching, style search
    dissect   -- generator unit thresholding, IoU labeling, overlays
    trainer   -- training jobs, evaluation harness, checkpoints
    serve     -- HTTP API for the preference study and live generation
    cli       -- command line entrypoint
"""

__version__ = "0.1.0"
