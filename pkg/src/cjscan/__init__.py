"""CoinJoin detection over raw Bitcoin block files."""

from cjscan.model import (
    Outpoint,
    ResolvedTransaction,
    Txo,
    distinct_input_scripts,
    distinct_output_scripts,
    output_value_histogram,
    script_id,
)

__version__ = "0.1.0"

__all__ = [
    "Outpoint",
    "ResolvedTransaction",
    "Txo",
    "distinct_input_scripts",
    "distinct_output_scripts",
    "output_value_histogram",
    "script_id",
]
