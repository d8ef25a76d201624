"""Design and year-periodic operation optimization for district energy
systems with pit thermal energy storage."""

__version__ = "0.1.0"
