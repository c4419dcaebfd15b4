"""
connection.py

Purpose:
--------
Centralized DuckDB connection manager.

Run artifacts (train logs, per-sample metric tables) are queried in place,
so the default database is in-memory; pass a path to keep a run database.
"""

from pathlib import Path
from typing import Optional, Union

import duckdb

IN_MEMORY = ":memory:"


def get_connection(db_path: Optional[Union[str, Path]] = None, read_only: bool = False):
    """
    Create and return a DuckDB connection.

    Args:
        db_path: database file, or None for an in-memory database
        read_only (bool): if True, opens DB in read-only mode (file databases only)

    Returns:
        duckdb.DuckDBPyConnection
    """
    if db_path is None:
        return duckdb.connect(database=IN_MEMORY)
    return duckdb.connect(database=str(db_path), read_only=read_only)
