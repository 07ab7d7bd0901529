"""ctreason: routing-token CT slice interpretation at desk scale."""

__version__ = "0.1.0"
