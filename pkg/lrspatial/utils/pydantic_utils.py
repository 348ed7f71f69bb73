from pydantic import BaseModel, ConfigDict


class ArbitraryModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


class FrozenArbitraryModel(BaseModel):
    """Immutable record holding numpy/scipy objects."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)
