from .errors import ContractError, DimensionError, NumericError, SpadeError

__version__ = "0.1.0"
__all__ = ["ContractError", "DimensionError", "NumericError", "SpadeError", "__version__"]
