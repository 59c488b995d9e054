import json
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel


class JSONEncoder(json.JSONEncoder):
    def default(self, obj: Any) -> Any:
        # numpy arrays and scalars
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.generic):
            return obj.item()

        # pydantic schemas nested in plain dicts
        if isinstance(obj, BaseModel):
            return obj.model_dump(mode="json")

        if isinstance(obj, Path):
            return str(obj)

        if isinstance(obj, (set, frozenset)):
            return sorted(obj)

        return super().default(obj)


def dumps(obj: Any, **kwargs: Any) -> str:
    """json.dumps with the numpy-aware encoder"""
    return json.dumps(obj, cls=JSONEncoder, **kwargs)
