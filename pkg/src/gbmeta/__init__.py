"""Finetuning, Reptile and first-order MAML in one gradient-based framework."""

__version__ = "0.1.0"
