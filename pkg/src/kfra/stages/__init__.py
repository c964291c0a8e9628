"""The reasoning loop's stages: hypothesis generation and cue grounding."""
