"""Eye-diagram automatic modulation classification."""

from ._core import frame_to_tensor, impair, modulate, read_dataset, run_cli, schemes

__all__ = ["frame_to_tensor", "impair", "modulate", "read_dataset", "run_cli", "schemes"]
