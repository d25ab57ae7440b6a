"""Reference-game toolkit: data prep, contrastive contexts, neural listeners
and speakers with pragmatic re-ranking, evaluation analyses, and a live
human-vs-model game service."""

__version__ = "0.1.0"
