from typing import Any, Dict, List

from .exceptions import ConfigError


def assign_values_if_path_exists(config: dict, values_to_assign: Dict[str, Any]) -> None:
    """
    Recursively assign values to a nested config dict based on dot-notation paths.
    Example paths:
    - "n_init"
    - "fit.n_repeat"
    """

    def assign_value(obj: dict, path: List[str], value: Any) -> None:
        """Recursively traverse the object and assign the value"""
        key = path[0]
        if key not in obj:
            raise ConfigError(f"Invalid path segment '{key}' in object")
        if len(path) == 1:
            obj[key] = value
            return
        if not isinstance(obj[key], dict):
            raise ConfigError(f"Path segment '{key}' is not a section")

        assign_value(obj[key], path[1:], value)

    for path, value in values_to_assign.items():
        try:
            assign_value(config, path.split("."), value)
        except ConfigError as e:
            raise ConfigError(f"Invalid override path: {path}. Error: {e}", {"path": path})
