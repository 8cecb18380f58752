"""Unit conventions.

Internally hbar = k_B = 1, energies (and temperatures, frequencies) are in
meV and times are in hbar/meV.  Conversions to laboratory units live here
and nowhere else.
"""

HBAR_MEV_PS = 0.6582119569  # hbar in meV * ps

UNITS_METADATA = {
    "energy": "meV",
    "temperature": "meV (k_B = 1)",
    "time_internal": "hbar/meV",
    "time_external": "ps",
    "hbar_meV_ps": HBAR_MEV_PS,
}


def ps_to_internal(t_ps: float) -> float:
    return t_ps / HBAR_MEV_PS


def internal_to_ps(t: float) -> float:
    return t * HBAR_MEV_PS


def parse_energy(value) -> float:
    """Return an energy in meV.

    Accepts plain numbers (already meV) or strings with an ``meV``/``eV``
    suffix, e.g. ``"1 eV"`` or ``"25meV"``.
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"cannot interpret {value!r} as an energy")
    text = value.strip()
    for suffix, scale in (("meV", 1.0), ("eV", 1000.0)):
        if text.endswith(suffix):
            return float(text[: -len(suffix)]) * scale
    return float(text)


def parse_time_ps(value) -> float:
    """Return a time in ps; strings may carry ``ps`` or ``ns``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"cannot interpret {value!r} as a time")
    text = value.strip()
    for suffix, scale in (("ps", 1.0), ("ns", 1000.0)):
        if text.endswith(suffix):
            return float(text[: -len(suffix)]) * scale
    return float(text)
