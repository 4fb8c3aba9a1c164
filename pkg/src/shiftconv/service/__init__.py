"""HTTP service wrapping the core toolkit (FastAPI + pydantic schemas)."""

from . import operations, schemas

__all__ = ["operations", "schemas"]
