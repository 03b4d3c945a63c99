"""Search-trace prompting harness for four small planning puzzles."""

__version__ = "0.1.0"
