"""clipseek: reinforcement-learning temporal localization of language
queries in feature videos."""

__version__ = "0.1.0"
