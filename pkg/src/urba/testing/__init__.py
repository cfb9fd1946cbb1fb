"""Reusable test infrastructure shared with out-of-tree server packages."""

from .contract import run_contract_suite

__all__ = ["run_contract_suite"]
