"""Auto-GPT style agents with additional expert opinions, plus shop and household simulators."""

__version__ = "0.1.0"
