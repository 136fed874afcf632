"""CPU neural style transfer engine with Laplacian edge-preservation losses."""

__version__ = "0.1.0"
