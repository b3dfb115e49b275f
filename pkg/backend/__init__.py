"""
Backend package for the near-field ISCSC digital-twin toolkit.
"""

__version__ = "1.0.0"
