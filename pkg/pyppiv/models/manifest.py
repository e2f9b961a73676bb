"""Run manifest written next to every result set."""

from marshmallow import fields

from .base import BaseModel, BaseSchema


class RunManifest(BaseModel):
    """Record of how a result set was produced.

    Attributes:
        command: CLI sub-command that ran.
        config_digest: sha256 of the configuration bytes and overrides.
        seed: Master seed, if any.
        version: Package version.
        requirements: Data preparation rules applied, one mapping per method.
        started: UTC start time.
        finished: UTC end time.
        elapsed_seconds: Wall time.
        outputs: File names written.
    """

    pass


class RequirementSchema(BaseSchema):
    """Schema for the applied `MethodRequirements` entries."""

    method = fields.Str()
    n_j_min = fields.Int()
    cc_mode = fields.Str()
    outcome_covariates = fields.Str()


class RunManifestSchema(BaseSchema):
    """Schema for `RunManifest`."""

    __model__ = RunManifest

    command = fields.Str()
    config_digest = fields.Str()
    seed = fields.Int(allow_none=True)
    version = fields.Str()
    requirements = fields.List(fields.Nested(RequirementSchema))
    started = fields.AwareDateTime()
    finished = fields.AwareDateTime()
    elapsed_seconds = fields.Float()
    outputs = fields.List(fields.Str())
