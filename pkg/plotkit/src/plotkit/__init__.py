"""Batch figure renderer for the simulator's CSV/JSON artifacts."""

from .render import FigureRecipe, RecipeError, load_recipe, render
from .schema import SchemaError, Table, read_csv, read_json

__version__ = "0.1.0"

__all__ = ["FigureRecipe", "RecipeError", "load_recipe", "render",
           "SchemaError", "Table", "read_csv", "read_json"]
