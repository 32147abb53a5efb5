# src/ciirl/__init__.py

# Make the main CLI function available for potential entry points
from .cli import main

__version__ = "1.0.0"
