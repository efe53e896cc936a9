"""Two-stage singer identification: a deepfake discriminator gates a
singer embedder matched against enrolled vocal profiles."""

__version__ = "0.1.0"
