"""Provider-clustered panel data."""

from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from pyppiv.exceptions import DimensionMismatchError

from .base import BaseModel


class CovariateSchema(BaseModel):
    """Names of the covariate columns split into fully and partially observed.

    Attributes:
        obs: Names of the fully observed covariates (``W_obs``).
        miss: Names of the partially observed covariates (``W_miss``).
    """

    @property
    def names(self) -> Tuple[str, ...]:
        """All covariate names, observed first.

        Returns:
            The ``obs`` names followed by the ``miss`` names.
        """
        return tuple(self.obs) + tuple(self.miss)


class PatientRecord(BaseModel):
    """One treated patient.

    Attributes:
        provider_id: Identifier of the treating provider.
        order_index: 1-based rank of the patient in the provider's treatment order.
        time_index: Positive integer period of the prescription.
        x: Treatment, 0 for A and 1 for B.
        y: Outcome, ``None`` when missing.
        w_obs: Values of the fully observed covariates.
        w_miss: Values of the partially observed covariates, ``None`` when missing.
        r: Missing flags for ``w_miss`` (1 = missing).
        true_pp: Simulated preference, if known.
        true_theta: Simulated linear preference predictor, if known.
    """

    pass


class Violation(BaseModel):
    """A broken panel invariant.

    Attributes:
        rule: Short name of the broken rule, e.g. ``"treatment"``.
        provider_id: Provider where it occurred, if any.
        order_index: Patient where it occurred, if any.
        message: Human readable description.
    """

    def __str__(self) -> str:
        """Render the violation with its location.

        Returns:
            A one line description.
        """
        where = []
        if self.provider_id is not None:
            where.append(f"provider {self.provider_id}")
        if self.order_index is not None:
            where.append(f"patient {self.order_index}")
        loc = ", ".join(where)
        if loc:
            return f"[{self.rule}] {loc}: {self.message}"
        return f"[{self.rule}] {self.message}"


class PanelDataset(BaseModel):
    """Column store of patient records grouped by provider.

    Rows are contiguous per provider and sorted by ``order_index`` inside each
    provider. Provider ``k`` is labelled ``provider_ids[k]`` and its rows carry
    ``provider == k``. Missing values are NaN; ``r`` flags missing ``w_miss``
    entries. ``u`` and ``w_miss_full`` are simulation-internal (unmeasured
    confounder and the partially observed covariates before masking).

    Use :meth:`build` rather than the constructor.
    """

    @classmethod
    def build(
        cls,
        provider_labels: Sequence[Any],
        order_index: Sequence[int],
        x: Sequence[float],
        y: Sequence[float],
        w_obs: Optional[np.ndarray] = None,
        w_miss: Optional[np.ndarray] = None,
        covariate_schema: Optional[CovariateSchema] = None,
        time_index: Optional[Sequence[int]] = None,
        r: Optional[np.ndarray] = None,
        true_pp: Optional[Sequence[float]] = None,
        true_theta: Optional[Sequence[float]] = None,
        u: Optional[Sequence[float]] = None,
        w_miss_full: Optional[np.ndarray] = None,
        generator: Optional[str] = None,
    ) -> "PanelDataset":
        """Build a dataset from row-aligned columns.

        Providers are kept in order of first appearance; rows are stably sorted
        by ``order_index`` inside each provider, so ties keep their input order.

        Args:
            provider_labels: Provider identifier per row.
            order_index: Treatment rank per row.
            x: Treatment per row.
            y: Outcome per row (NaN for missing).
            w_obs: N×P matrix of fully observed covariates.
            w_miss: N×Q matrix of partially observed covariates (NaN for missing).
            covariate_schema: Column names; defaults to ``w1..`` style names.
            time_index: Period per row; defaults to ``ceil(12 i / n_j)``.
            r: N×Q missing flags; defaults to ``isnan(w_miss)``.
            true_pp: Simulated preference per row.
            true_theta: Simulated preference predictor per row.
            u: Unmeasured confounder per row (simulation only).
            w_miss_full: Unmasked partially observed covariates (simulation only).
            generator: Name of the generating process, if simulated.

        Returns:
            A new `PanelDataset`.

        Raises:
            DimensionMismatchError: If the columns do not share one length.

        """
        labels = [str(p) for p in provider_labels]
        n = len(labels)
        order_arr = np.asarray(order_index, dtype=np.int64)
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        w_obs_arr = _matrix(w_obs, n)
        w_miss_arr = _matrix(w_miss, n)
        for name, col in (("order_index", order_arr), ("x", x_arr), ("y", y_arr)):
            if col.shape != (n,):
                raise DimensionMismatchError(
                    f"column '{name}' has shape {col.shape}, expected ({n},)"
                )
        if r is None:
            r_arr = np.isnan(w_miss_arr)
        else:
            r_arr = np.asarray(r, dtype=bool).reshape(n, -1)
        if r_arr.shape != w_miss_arr.shape:
            raise DimensionMismatchError(
                "missing flags do not match the partially observed covariates"
            )

        ids: Dict[str, int] = {}
        codes = np.array(
            [ids.setdefault(lab, len(ids)) for lab in labels], dtype=np.int64
        )
        order = np.lexsort((order_arr, codes)) if n else np.arange(0)

        if covariate_schema is None:
            covariate_schema = CovariateSchema(
                obs=[f"w_obs{k + 1}" for k in range(w_obs_arr.shape[1])],
                miss=[f"w_miss{k + 1}" for k in range(w_miss_arr.shape[1])],
            )
        widths = (len(covariate_schema.obs), len(covariate_schema.miss))
        if widths != (w_obs_arr.shape[1], w_miss_arr.shape[1]):
            raise DimensionMismatchError(
                "covariate schema does not match covariate matrices"
            )

        def _opt(col: Optional[Sequence[float]]) -> Optional[np.ndarray]:
            if col is None:
                return None
            arr = np.asarray(col, dtype=float)
            if arr.shape[0] != n:
                raise DimensionMismatchError(
                    "optional column length differs from the panel"
                )
            return arr[order]

        codes = codes[order]
        if time_index is None:
            time_arr = default_time_index(codes)
        else:
            time_arr = np.asarray(time_index, dtype=np.int64)[order]

        return cls(
            provider_ids=tuple(ids),
            provider=codes,
            order_index=order_arr[order],
            time_index=time_arr,
            x=x_arr[order],
            y=y_arr[order],
            w_obs=w_obs_arr[order],
            w_miss=w_miss_arr[order],
            r=r_arr[order],
            covariate_schema=covariate_schema,
            true_pp=_opt(true_pp),
            true_theta=_opt(true_theta),
            u=_opt(u),
            w_miss_full=None if w_miss_full is None else _matrix(w_miss_full, n)[order],
            generator=generator,
        )

    @classmethod
    def from_records(
        cls,
        records: Iterable[PatientRecord],
        covariate_schema: Optional[CovariateSchema] = None,
    ) -> "PanelDataset":
        """Build a dataset from `PatientRecord` objects.

        Args:
            records: The patient records, in any order.
            covariate_schema: Column names for the covariates.

        Returns:
            A new `PanelDataset`.

        """
        recs = list(records)
        n_obs = len(recs[0].w_obs) if recs else 0
        n_miss = len(recs[0].w_miss) if recs else 0

        def _val(v: Optional[float]) -> float:
            return np.nan if v is None else float(v)

        def _col(name: str) -> Optional[List[float]]:
            vals = [getattr(rec, name, None) for rec in recs]
            return None if all(v is None for v in vals) else [_val(v) for v in vals]

        def _flags(rec: PatientRecord) -> List[bool]:
            return list(getattr(rec, "r", None) or [v is None for v in rec.w_miss])

        shape = (len(recs), n_miss)
        w_miss = np.array([[_val(v) for v in rec.w_miss] for rec in recs], dtype=float)
        r = np.array([_flags(rec) for rec in recs], dtype=bool).reshape(shape)
        w_obs = np.array([list(rec.w_obs) for rec in recs], dtype=float)
        times = [getattr(rec, "time_index", None) for rec in recs]
        return cls.build(
            provider_labels=[rec.provider_id for rec in recs],
            order_index=[rec.order_index for rec in recs],
            x=[rec.x for rec in recs],
            y=[_val(rec.y) for rec in recs],
            w_obs=w_obs.reshape(len(recs), n_obs),
            w_miss=w_miss.reshape(shape),
            r=r,
            covariate_schema=covariate_schema,
            time_index=None if any(t is None for t in times) else times,
            true_pp=_col("true_pp"),
            true_theta=_col("true_theta"),
        )

    @property
    def n_records(self) -> int:
        """Number of patient records ``N``."""
        return int(self.x.shape[0])

    @property
    def n_providers(self) -> int:
        """Number of providers ``J``."""
        return len(self.provider_ids)

    def provider_sizes(self) -> np.ndarray:
        """Records per provider, in provider order.

        Returns:
            Integer array of length ``J``.
        """
        return np.bincount(self.provider, minlength=self.n_providers)

    def provider_bounds(self) -> np.ndarray:
        """Row offsets of each provider block.

        Returns:
            Array of length ``J + 1``; provider ``k`` spans ``[b[k], b[k+1])``.
        """
        return np.concatenate([[0], np.cumsum(self.provider_sizes())])

    def positions(self) -> np.ndarray:
        """0-based position of every row inside its provider block.

        Returns:
            Integer array of length ``N``.
        """
        bounds = self.provider_bounds()
        return np.arange(self.n_records) - bounds[self.provider]

    def covariates(self, which: str = "all") -> Tuple[np.ndarray, Tuple[str, ...]]:
        """Covariate matrix and names.

        Args:
            which: ``"all"`` for ``W_obs`` and ``W_miss``; ``"obs"`` for ``W_obs``
                plus any ``W_miss`` column without missing entries in this data.

        Returns:
            The N×K matrix and its column names.

        """
        if which == "all":
            everything = np.column_stack([self.w_obs, self.w_miss])
            return everything, self.covariate_schema.names
        keep = [k for k in range(self.w_miss.shape[1]) if not self.r[:, k].any()]
        schema = self.covariate_schema
        names = tuple(schema.obs) + tuple(schema.miss[k] for k in keep)
        return np.column_stack([self.w_obs, self.w_miss[:, keep]]), names

    def complete_rows(self, on_covariates: bool = True) -> np.ndarray:
        """Boolean mask of rows with a present outcome (and covariates).

        Args:
            on_covariates: Whether every ``W_miss`` entry must be present too.

        Returns:
            Boolean array of length ``N``.

        """
        mask = ~np.isnan(self.y)
        if on_covariates and self.r.shape[1]:
            mask &= ~self.r.any(axis=1)
        return mask

    def take(self, mask: np.ndarray) -> "PanelDataset":
        """Subset rows, dropping providers left without records.

        Args:
            mask: Boolean row mask.

        Returns:
            A new `PanelDataset`; ``order_index`` values are retained.

        """
        mask = np.asarray(mask, dtype=bool)
        kept_codes = np.unique(self.provider[mask])
        remap = np.full(self.n_providers, -1, dtype=np.int64)
        remap[kept_codes] = np.arange(kept_codes.size)

        def _sub(col: Optional[np.ndarray]) -> Optional[np.ndarray]:
            return None if col is None else col[mask]

        data = dict(self.__dict__)
        data.update(
            provider_ids=tuple(self.provider_ids[k] for k in kept_codes),
            provider=remap[self.provider[mask]],
            order_index=self.order_index[mask],
            time_index=self.time_index[mask],
            x=self.x[mask],
            y=self.y[mask],
            w_obs=self.w_obs[mask],
            w_miss=self.w_miss[mask],
            r=self.r[mask],
            true_pp=_sub(self.true_pp),
            true_theta=_sub(self.true_theta),
            u=_sub(self.u),
            w_miss_full=_sub(self.w_miss_full),
        )
        return type(self)(**data)

    def with_missing(self, r: np.ndarray) -> "PanelDataset":
        """Mask partially observed covariates according to new flags.

        Args:
            r: N×Q boolean missing flags.

        Returns:
            A new `PanelDataset` whose ``w_miss`` is NaN where ``r`` is set.

        """
        r = np.asarray(r, dtype=bool).reshape(self.w_miss.shape)
        full = self.w_miss if self.w_miss_full is None else self.w_miss_full
        return self.replace(  # type: ignore
            w_miss=np.where(r, np.nan, full), r=r, w_miss_full=np.array(full)
        )

    def records(self) -> Iterator[PatientRecord]:
        """Iterate rows as `PatientRecord` objects.

        Yields:
            One record per row in storage order.
        """
        for i in range(self.n_records):
            yield PatientRecord(
                provider_id=self.provider_ids[self.provider[i]],
                order_index=int(self.order_index[i]),
                time_index=int(self.time_index[i]),
                x=float(self.x[i]),
                y=None if np.isnan(self.y[i]) else float(self.y[i]),
                w_obs=[float(v) for v in self.w_obs[i]],
                w_miss=[
                    None if flag else float(v)
                    for v, flag in zip(self.w_miss[i], self.r[i])
                ],
                r=[int(flag) for flag in self.r[i]],
                true_pp=None if self.true_pp is None else float(self.true_pp[i]),
                true_theta=(
                    None if self.true_theta is None else float(self.true_theta[i])
                ),
            )

    def __repr__(self) -> str:
        """Return the object as a string.

        Returns:
            Size summary of the panel.

        """
        return f"PanelDataset<N={self.n_records}, J={self.n_providers}>"


def default_time_index(provider: np.ndarray) -> np.ndarray:
    """Map ranks to twelve periods, ``T = ceil(12 i / n_j)``.

    Args:
        provider: Contiguous provider codes.

    Returns:
        Integer periods in ``1..12``.

    """
    provider = np.asarray(provider, dtype=np.int64)
    if provider.size == 0:
        return provider.copy()
    sizes = np.bincount(provider)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rank = np.arange(provider.size) - bounds[provider] + 1
    n_j = sizes[provider]
    return -((-12 * rank) // n_j)


def _matrix(values: Optional[np.ndarray], n: int) -> np.ndarray:
    if values is None:
        return np.zeros((n, 0))
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(n, -1)
    if arr.shape[0] != n:
        raise DimensionMismatchError(
            f"covariate matrix has {arr.shape[0]} rows, expected {n}"
        )
    return arr
