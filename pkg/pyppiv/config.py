"""Study configuration and column specification files.

Both are INI files read with `configparser`. A sibling file named like the
original with a ``_local`` suffix (``study_local.cfg`` next to ``study.cfg``)
takes precedence when present. Every problem is reported with the line it was
found on.
"""

import configparser
import hashlib
import io
import json
import logging
import re
from os import path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from marshmallow import ValidationError, fields, validate

from pyppiv.exceptions import ConfigError
from pyppiv.models import (
    BaseModel,
    GenCoefficientsSchema,
    Generator,
    Link,
    Missingness,
    ScenarioConfig,
    StrictSchema,
    coefficients_to_dict,
    default_coefficients,
    parse_method,
)
from pyppiv.models.scenario import COEFFICIENT_BLOCKS


logger = logging.getLogger(__name__)

SECTION_RE = re.compile(r"^\s*\[(?P<name>[^\]]+)\]")
OPTION_RE = re.compile(r"^\s*(?P<key>[^=#\s][^=]*?)\s*=")
_DIGEST_NEUTRAL = ("workers",)
FILE_ORDER = "@row"


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(
        interpolation=configparser.ExtendedInterpolation(),
        delimiters=("="),
        inline_comment_prefixes=("#"),
        empty_lines_in_values=False,
    )


def resolve_path(filename: str) -> str:
    """Path of the file actually read, preferring a ``_local`` override.

    Args:
        filename: Path of the configuration file.

    Returns:
        The ``_local`` variant if it exists, else ``filename``.

    """
    root, ext = path.splitext(filename)
    local_filename = f"{root}_local{ext}"
    if path.isfile(local_filename):
        logger.info("using local override %s", local_filename)
        return local_filename
    return filename


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every ``section/key`` and of every section header."""
    index: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = SECTION_RE.match(line)
        if header:
            section = header.group("name").strip()
            index[(section, "")] = lineno
            continue
        option = OPTION_RE.match(line)
        if option and section:
            index.setdefault((section, option.group("key").strip().lower()), lineno)
    return index


def _flatten(messages: Any, prefix: str = "") -> Iterable[Tuple[str, str]]:
    if isinstance(messages, Mapping):
        for key, value in messages.items():
            yield from _flatten(value, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(messages, (list, tuple)):
        for value in messages:
            yield from _flatten(value, prefix)
    else:
        yield prefix, str(messages)


class _Source:
    """A parsed INI file together with its line index."""

    def __init__(self, filename: str) -> None:
        self.filename = resolve_path(filename)
        try:
            with open(self.filename, "rb") as file:
                self.raw = file.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {filename}: {exc}") from exc
        text = self.raw.decode("utf-8")
        self.parser = _parser()
        try:
            self.parser.read_string(text, source=self.filename)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            where = f"line {lineno}: " if lineno else ""
            raise ConfigError(
                f"{self.filename} is not a valid INI file", [f"{where}{exc.message}"]
            ) from exc
        self.lines = _line_index(text)

    def where(self, section: str, key: str = "") -> str:
        lineno = self.lines.get((section, key.lower())) or self.lines.get((section, ""))
        return f"{self.filename}:{lineno}" if lineno else self.filename

    def section(self, name: str) -> Dict[str, str]:
        if not self.parser.has_section(name):
            return {}
        try:
            return dict(self.parser.items(name))
        except configparser.Error as exc:
            raise ConfigError(
                f"bad interpolation in [{name}]", [f"{self.where(name)}: {exc}"]
            )

    def diagnostics(self, section: str, error: ValidationError) -> List[str]:
        out = []
        for key, message in _flatten(error.messages):
            # list item errors are keyed by index; report the option's line
            leaf = next((p for p in reversed(key.split(".")) if not p.isdigit()), key)
            out.append(f"{self.where(section, leaf)}: [{section}] {key}: {message}")
        return out


class CommaList(fields.List):
    """List field that also accepts a comma separated string."""

    def _deserialize(self, value: Any, attr: Any, data: Any, **kwargs: Any) -> Any:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return super()._deserialize(value, attr, data, **kwargs)


class RunSection(BaseModel):
    """The ``[run]`` section."""

    pass


class RunSectionSchema(StrictSchema):
    """Schema for `RunSection`."""

    __model__ = RunSection

    seed = fields.Int(load_default=20240101, validate=validate.Range(min=0))
    n_reps = fields.Int(load_default=200, validate=validate.Range(min=1))
    methods = CommaList(fields.Str(), load_default=None)
    se = fields.Str(
        load_default="naive", validate=validate.OneOf(["naive", "corrected"])
    )
    link = fields.Str(
        load_default="logit", validate=validate.OneOf([e.value for e in Link])
    )
    workers = fields.Int(load_default=1, validate=validate.Range(min=1))
    calibrate = fields.Bool(load_default=False)
    calibration_size = fields.Int(
        load_default=100_000, validate=validate.Range(min=1000)
    )


class GridSection(BaseModel):
    """The ``[grid]`` section."""

    pass


class GridSectionSchema(StrictSchema):
    """Schema for `GridSection`."""

    __model__ = GridSection

    generators = CommaList(
        fields.Str(validate=validate.OneOf([e.value for e in Generator])),
        load_default=["A", "B"],
    )
    n_j = CommaList(
        fields.Int(validate=validate.Range(min=2)), load_default=[24, 108, 408]
    )
    missingness = CommaList(
        fields.Str(validate=validate.OneOf([e.value for e in Missingness])),
        load_default=["none", "mcar", "mnar"],
    )
    n_providers = fields.Int(load_default=100, validate=validate.Range(min=2))
    target_missing_rate = fields.Float(
        load_default=0.40,
        validate=validate.Range(min=0.0, max=1.0, max_inclusive=False),
    )


class CoefficientsSection(BaseModel):
    """The plain ``[coefficients]`` section."""

    pass


class CoefficientsSectionSchema(StrictSchema):
    """Schema for `CoefficientsSection`.

    ``calibrated`` lists the generators whose coefficient sections in the same
    file came out of `pyppiv calibrate`.
    """

    __model__ = CoefficientsSection

    calibrated = CommaList(
        fields.Str(validate=validate.OneOf([e.value for e in Generator])),
        load_default=[],
    )


DEFAULT_METHODS = (
    "prevpatient",
    "prev2patient",
    "prev5patient",
    "prev10patient",
    "allprevprop",
    "allprop",
    "alldichmean",
    "alldichmedian",
    "epp",
    "epp_rirs",
    "star",
)


class StudyConfig(BaseModel):
    """A parsed study configuration.

    Attributes:
        filename: The file actually read.
        digest: SHA-256 of the file bytes and the command line overrides.
        run: `RunSection`.
        grid: `GridSection`.
        methods: Canonical construction method names.
        coefficients: `GenCoefficients` per generator value.
    """

    def scenarios(self) -> List[ScenarioConfig]:
        """Expand the grid into scenario cells in generator, n_j, missingness order.

        Returns:
            One `ScenarioConfig` per cell with its ``cell`` index set.

        """
        cells = []
        for generator in self.grid.generators:
            for n_j in self.grid.n_j:
                for missingness in self.grid.missingness:
                    cells.append(
                        ScenarioConfig(
                            generator=Generator(generator),
                            n_providers=self.grid.n_providers,
                            n_j=n_j,
                            missingness=Missingness(missingness),
                            target_missing_rate=self.grid.target_missing_rate,
                            n_reps=self.run.n_reps,
                            seed=self.run.seed,
                            coefficients=getattr(self.coefficients, generator),
                            link=Link(self.run.link),
                            se_kind=self.run.se,
                            cell=len(cells),
                        )
                    )
        return cells


def config_digest(raw: bytes, overrides: Optional[Mapping[str, Any]] = None) -> str:
    """Digest of a configuration and its overrides.

    Overrides that cannot change results, such as ``workers``, are left out.

    Args:
        raw: The file bytes.
        overrides: Command line values applied on top.

    Returns:
        A hex SHA-256 digest.

    """
    digest = hashlib.sha256(raw)
    active = {
        k: v
        for k, v in (overrides or {}).items()
        if v is not None and k not in _DIGEST_NEUTRAL
    }
    digest.update(json.dumps(active, sort_keys=True, default=str).encode("utf-8"))
    return digest.hexdigest()


def _load(
    schema: StrictSchema, data: Mapping[str, Any], source: _Source, section: str
) -> Any:
    try:
        return schema.load(data)
    except ValidationError as exc:
        diagnostics = source.diagnostics(section, exc)
        raise ConfigError(f"invalid [{section}]", diagnostics) from exc


def _coefficient_sections(
    source: _Source,
) -> Dict[Optional[str], Dict[str, Dict[str, str]]]:
    """Group ``coefficients.<block>`` and ``coefficients.<gen>.<block>`` sections."""
    found: Dict[Optional[str], Dict[str, Dict[str, str]]] = {None: {}}
    problems = []
    known = ", ".join(COEFFICIENT_BLOCKS)
    for name in source.parser.sections():
        parts = name.split(".")
        if parts[0] != "coefficients" or len(parts) == 1:
            continue
        generator = parts[1] if len(parts) == 3 else None
        block = parts[-1]
        if len(parts) not in (2, 3) or block not in COEFFICIENT_BLOCKS:
            problems.append(
                f"{source.where(name)}: unknown section [{name}] (blocks: {known})"
            )
            continue
        if generator is not None and generator not in {g.value for g in Generator}:
            problems.append(f"{source.where(name)}: unknown generator in [{name}]")
            continue
        found.setdefault(generator, {})[block] = source.section(name)
    if problems:
        raise ConfigError("invalid coefficient sections", problems)
    return found


def _coefficients(source: _Source) -> Dict[str, Any]:
    sections = _coefficient_sections(source)
    flags = _load(
        CoefficientsSectionSchema(),
        source.section("coefficients"),
        source,
        "coefficients",
    )
    out = {}
    for generator in Generator:
        blocks = coefficients_to_dict(default_coefficients(generator))
        blocks["calibrated"] = generator.value in flags.calibrated
        for layer in (sections[None], sections.get(generator.value, {})):
            for block, values in layer.items():
                blocks[block].update(values)
        try:
            out[generator.value] = GenCoefficientsSchema().load(blocks)
        except ValidationError as exc:
            diagnostics = []
            for key, message in _flatten(exc.messages):
                block, _, leaf = key.partition(".")
                section = f"coefficients.{generator.value}.{block}"
                if not source.parser.has_section(section):
                    section = f"coefficients.{block}"
                where = source.where(section, leaf)
                diagnostics.append(f"{where}: [{section}] {leaf}: {message}")
            raise ConfigError(
                f"invalid coefficients for generator {generator.value}", diagnostics
            )
    return out


def load_study_config(
    filename: str, overrides: Optional[Mapping[str, Any]] = None
) -> StudyConfig:
    """Read and validate a study configuration.

    Sections are ``[run]``, ``[grid]`` and ``[coefficients.<block>]``, the
    latter optionally narrowed to one generator as
    ``[coefficients.<A|B>.<block>]``. A plain ``[coefficients]`` section may
    flag generators whose sets are calibration output (``calibrated = A, B``).
    Unknown sections and keys are errors.

    Args:
        filename: Path of the INI file.
        overrides: ``[run]`` values set on the command line; None values are
            ignored.

    Returns:
        The `StudyConfig`.

    Raises:
        ConfigError: With one diagnostic per problem, each naming its line.

    """
    source = _Source(filename)
    allowed = {"run", "grid", "coefficients"}
    unknown = [
        f"{source.where(name)}: unknown section [{name}]"
        for name in source.parser.sections()
        if name not in allowed and not name.startswith("coefficients.")
    ]
    if unknown:
        raise ConfigError(f"invalid {source.filename}", unknown)

    run_data: Dict[str, Any] = source.section("run")
    for key, value in (overrides or {}).items():
        if value is not None:
            run_data[key] = value
    run = _load(RunSectionSchema(), run_data, source, "run")
    grid = _load(GridSectionSchema(), source.section("grid"), source, "grid")

    try:
        methods = [parse_method(m) for m in (run.methods or DEFAULT_METHODS)]
    except ValueError as exc:
        where = source.where("run", "methods")
        raise ConfigError("invalid [run]", [f"{where}: {exc}"]) from exc

    study = StudyConfig(
        filename=source.filename,
        digest=config_digest(source.raw, overrides),
        run=run,
        grid=grid,
        methods=methods,
        coefficients=_coefficients(source),
    )
    logger.debug("loaded %s (digest %s)", source.filename, study.digest[:12])
    return study


def default_study_config(overrides: Optional[Mapping[str, Any]] = None) -> StudyConfig:
    """Study configuration made of defaults only.

    Args:
        overrides: ``[run]`` values to apply.

    Returns:
        The `StudyConfig`.

    """
    run_data = {k: v for k, v in (overrides or {}).items() if v is not None}
    run = RunSectionSchema().load(run_data)
    return StudyConfig(
        filename=None,
        digest=config_digest(b"", overrides),
        run=run,
        grid=GridSectionSchema().load({}),
        methods=[parse_method(m) for m in (run.methods or DEFAULT_METHODS)],
        coefficients={g.value: default_coefficients(g) for g in Generator},
    )


def load_coefficients(filename: str) -> Dict[str, Any]:
    """Coefficient sets of a file written by `render_coefficients`.

    Args:
        filename: Path of the INI file.

    Returns:
        `GenCoefficients` keyed by generator value.

    """
    return dict(vars(load_study_config(filename).coefficients))


class ColumnSpec(BaseModel):
    """Mapping of a user CSV onto a panel.

    Attributes:
        provider: Provider column.
        order: Date or integer order column; ``@row`` ranks patients in file
            order.
        treatment: Treatment column.
        outcome: Outcome column.
        time: Optional period column.
        observed: Always observed covariate columns.
        partial: Partially observed covariate columns.
        treated_value: Treatment value coding ``B``.
        date_format: Explicit date format, None to let `dateutil` parse.
        digest: SHA-256 of the file bytes.
    """

    @property
    def columns(self) -> Tuple[str, ...]:
        """Every referenced column."""
        names = [self.provider, self.treatment, self.outcome]
        if self.order != FILE_ORDER:
            names.insert(1, self.order)
        if self.time:
            names.append(self.time)
        return tuple(names) + tuple(self.observed) + tuple(self.partial)


class ColumnsSectionSchema(StrictSchema):
    """Schema for ``[columns]``."""

    provider = fields.Str(required=True)
    order = fields.Str(required=True)
    treatment = fields.Str(required=True)
    outcome = fields.Str(required=True)
    time = fields.Str(load_default=None)


class CovariatesSectionSchema(StrictSchema):
    """Schema for ``[covariates]``."""

    observed = CommaList(fields.Str(), load_default=[])
    partial = CommaList(fields.Str(), load_default=[])


class OptionsSectionSchema(StrictSchema):
    """Schema for ``[options]``."""

    treated_value = fields.Str(load_default="1")
    date_format = fields.Str(load_default=None)


def load_column_spec(filename: str) -> ColumnSpec:
    """Read the column specification used by ``analyze`` and ``describe``.

    Args:
        filename: Path of the INI file with ``[columns]``, ``[covariates]``
            and ``[options]``.

    Returns:
        The `ColumnSpec`.

    Raises:
        ConfigError: With one diagnostic per problem.

    """
    source = _Source(filename)
    schemas = {
        "columns": ColumnsSectionSchema(),
        "covariates": CovariatesSectionSchema(),
        "options": OptionsSectionSchema(),
    }
    diagnostics = [
        f"{source.where(name)}: unknown section [{name}]"
        for name in source.parser.sections()
        if name not in schemas
    ]
    loaded: Dict[str, Any] = {}
    for name, schema in schemas.items():
        try:
            loaded.update(schema.load(source.section(name)).__dict__)
        except ValidationError as exc:
            diagnostics.extend(source.diagnostics(name, exc))
    if diagnostics:
        raise ConfigError(
            f"invalid column specification {source.filename}", diagnostics
        )

    roles = ("provider", "order", "treatment", "outcome", "time")
    named = [loaded[k] for k in roles if loaded[k]]
    named += list(loaded["observed"]) + list(loaded["partial"])
    duplicates = sorted({c for c in named if named.count(c) > 1})
    if duplicates:
        raise ConfigError(
            f"invalid column specification {source.filename}",
            [f"{source.where('columns')}: column used twice: {', '.join(duplicates)}"],
        )
    return ColumnSpec(digest=config_digest(source.raw), **loaded)


def make_column_spec(
    provider: str,
    order: str,
    treatment: str,
    outcome: str,
    observed: Iterable[str] = (),
    partial: Iterable[str] = (),
    time: Optional[str] = None,
    treated_value: str = "1",
    date_format: Optional[str] = None,
) -> ColumnSpec:
    """Column specification built in code rather than read from a file.

    Args:
        provider: Provider column.
        order: Date or integer order column.
        treatment: Treatment column.
        outcome: Outcome column.
        observed: Always observed covariate columns.
        partial: Partially observed covariate columns.
        time: Optional period column.
        treated_value: Treatment value coding ``B``.
        date_format: Explicit date format.

    Returns:
        The `ColumnSpec`; its digest covers the rendered INI text.

    """
    spec = ColumnSpec(
        provider=provider,
        order=order,
        treatment=treatment,
        outcome=outcome,
        time=time,
        observed=list(observed),
        partial=list(partial),
        treated_value=treated_value,
        date_format=date_format,
        digest="",
    )
    return spec.replace(digest=config_digest(render_column_spec(spec).encode("utf-8")))


def render_column_spec(spec: ColumnSpec) -> str:
    """INI text of a column specification, readable by `load_column_spec`.

    Args:
        spec: The column specification.

    Returns:
        The file content.

    """
    parser = configparser.ConfigParser(interpolation=None)
    columns = {
        "provider": spec.provider,
        "order": spec.order,
        "treatment": spec.treatment,
        "outcome": spec.outcome,
    }
    if spec.time:
        columns["time"] = spec.time
    parser["columns"] = columns
    parser["covariates"] = {
        "observed": ", ".join(spec.observed),
        "partial": ", ".join(spec.partial),
    }
    options = {"treated_value": spec.treated_value}
    if spec.date_format:
        options["date_format"] = spec.date_format
    parser["options"] = options
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def render_coefficients(coefficients: Mapping[str, Any]) -> str:
    """INI text of per generator coefficient sets, readable by `load_study_config`.

    Args:
        coefficients: `GenCoefficients` keyed by generator value.

    Returns:
        The ``[coefficients.<generator>.<block>]`` sections.

    """
    parser = configparser.ConfigParser(interpolation=None)
    calibrated = [g for g, coefs in coefficients.items() if coefs.calibrated]
    if calibrated:
        parser["coefficients"] = {"calibrated": ", ".join(calibrated)}
    for generator, coefs in coefficients.items():
        blocks = coefficients_to_dict(coefs)
        for block in COEFFICIENT_BLOCKS:
            parser[f"coefficients.{generator}.{block}"] = {
                key: repr(value) if isinstance(value, float) else str(value)
                for key, value in blocks[block].items()
            }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()
