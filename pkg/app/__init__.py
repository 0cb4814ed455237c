"""Multiway ASAG - multiway-attention short answer grading on a numpy autodiff core"""

__version__ = "0.1.0"
