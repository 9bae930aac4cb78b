"""Single table of numeric defaults.  The CLI can override any of them."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Defaults:
    # media
    exterior_match_rtol: float = 1e-9
    # geometry
    mu_quad_order: int = 3
    mu_refine_levels: int = 2
    voxel_subsample: int = 4
    # spectrum
    voxel_cap: int = 20_000
    dense_eig_limit: int = 2_500
    cluster_rtol: float = 1e-3
    pole_rtol_w: float = 1e-9
    # fields (Lippmann-Schwinger)
    ls_rtol: float = 1e-8
    ls_restart: int = 50
    ls_maxiter: int = 2000
    # forward
    pole_rtol: float = 1e-9
    validity_threshold_minnaert: float = 0.1
    validity_threshold_bodywave: float = 1.0
    proximity_factor: float = 10.0
    # oracle
    series_extra_modes: int = 10
    series_tail_rtol: float = 1e-12
    # inversion
    fit_min_samples: int = 8
    fit_prominence: float = 10.0
    fit_percentile: float = 50.0
    field_noise_floor: float = 1e-12
    bulk_amplitude_fraction: float = 0.1
    bulk_denominator_tol: float = 1e-12
    tikhonov: float = 1e-6

    def with_overrides(self, **kw) -> "Defaults":
        known = {f.name for f in fields(self)}
        unknown = set(kw) - known
        if unknown:
            raise KeyError(f"unknown default(s): {sorted(unknown)}")
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULTS = Defaults()


def apply_overrides(**kw) -> None:
    """Change entries of the shared ``DEFAULTS`` table in place (used by the CLI)."""
    new = DEFAULTS.with_overrides(**kw)
    for f in fields(new):
        object.__setattr__(DEFAULTS, f.name, getattr(new, f.name))


@contextmanager
def overridden(**kw):
    """Temporarily override entries of ``DEFAULTS``."""
    saved = DEFAULTS.as_dict()
    apply_overrides(**kw)
    try:
        yield DEFAULTS
    finally:
        apply_overrides(**saved)


def parse_assignment(text: str) -> tuple[str, object]:
    """``"key=value"`` with the value converted to the type of the default."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    known = {f.name: f for f in fields(Defaults)}
    if not sep or key not in known:
        raise KeyError(f"unknown default {key!r}")
    typ = type(getattr(DEFAULTS, key))
    return key, typ(float(raw)) if typ is int else typ(raw)
