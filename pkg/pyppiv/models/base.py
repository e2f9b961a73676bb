"""Frozen record models and the schemas that build them."""
from types import SimpleNamespace
from typing import Any, Dict, Mapping

import numpy as np
from marshmallow import EXCLUDE, RAISE, Schema, post_load

from pyppiv.exceptions import InvalidOperation


JSON = Dict[str, Any]
MAX_REPR_LEN = 80


def _process_dict_values(value: Any) -> Any:
    """Process a value passed to a model.

    Args:
        value: A dict, list, array or plain value.

    Returns:
        Either an UnknownModel, a tuple of processed values, a read-only array, or \
            the original value passed through.

    """
    if isinstance(value, Mapping):
        return UnknownModel(**value)
    elif isinstance(value, list):
        return tuple(_process_dict_values(v) for v in value)
    elif isinstance(value, np.ndarray):
        value = value.view()
        value.flags.writeable = False
        return value
    else:
        return value


class BaseModel(SimpleNamespace):
    """Parent of every pyppiv record.

    Models are frozen once constructed. Nested dictionaries become `UnknownModel`
    instances, lists become tuples and numpy arrays become read-only views.

    Args:
        **kwargs: All passed parameters as converted to instance attributes.
    """

    def __init__(self, **kwargs: Any) -> None:
        kwargs = {k: _process_dict_values(v) for k, v in kwargs.items()}

        self.__dict__.update(kwargs)

    def __setattr__(self, name: str, value: Any) -> None:  # noqa: D105
        raise InvalidOperation(f"{type(self).__name__} is immutable (tried '{name}')")

    def __delattr__(self, name: str) -> None:  # noqa: D105
        raise InvalidOperation(f"{type(self).__name__} is immutable (tried '{name}')")

    def replace(self, **changes: Any) -> "BaseModel":
        """Build a copy of the model with some attributes changed.

        Args:
            **changes: Attributes to override.

        Returns:
            A new instance of the same class.

        """
        data = dict(self.__dict__)
        data.update(changes)
        new = type(self).__new__(type(self))
        BaseModel.__init__(new, **data)
        return new

    def __eq__(self, other: Any) -> bool:  # noqa: D105
        if type(self) is not type(other):
            return NotImplemented
        if self.__dict__.keys() != other.__dict__.keys():
            return False
        for key, value in self.__dict__.items():
            theirs = other.__dict__[key]
            if isinstance(value, np.ndarray) or isinstance(theirs, np.ndarray):
                if not np.array_equal(value, theirs, equal_nan=True):
                    return False
            elif value != theirs:
                return False
        return True

    __hash__ = None  # type: ignore

    def __repr__(self) -> str:
        """Return a default repr of any Model.

        Returns:
            The string model parameters up to a `MAX_REPR_LEN`.

        """
        repr_ = super().__repr__()
        if len(repr_) > MAX_REPR_LEN:
            return repr_[:MAX_REPR_LEN] + " ...)"
        else:
            return repr_


class UnknownModel(BaseModel):
    """A convenience class that inherits from `BaseModel`."""

    pass


class BaseSchema(Schema):
    """The default schema for all models."""

    __model__: Any = UnknownModel
    """Determine the object that is created when the load method is called."""

    class Meta:
        unknown = EXCLUDE
        ordered = True

    @post_load
    def make_object(self, data: JSON, **kwargs: Any) -> "__model__":
        """Build model for the given `__model__` class attribute.

        Args:
            data: The JSON dictionary to use to build the model.
            **kwargs: Unused but required to match signature of `Schema.make_object`

        Returns:
            An instance of the `__model__` class.

        """
        return self.__model__(**data)


class StrictSchema(BaseSchema):
    """Schema for user-written configuration; unknown keys are errors."""

    class Meta:
        unknown = RAISE
        ordered = True

