"""Tamper-localization protection for RAW images.

A protection network embeds an imperceptible signal into Bayer RAW data; the
image is rendered by a mixed ISP, attacked, and a detector localizes the
regions where the signal was destroyed.
"""
__version__ = "0.1.0"
