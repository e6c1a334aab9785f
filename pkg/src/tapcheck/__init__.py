"""tapcheck: interaction-threat analysis and model checking for
trigger-action automation rules."""

__version__ = "0.1.0"
