"""
dialogkit - diarization stitching, scoring and text preparation for
speaker-attributed clinical dialogue
"""

__version__ = "0.1.0"
