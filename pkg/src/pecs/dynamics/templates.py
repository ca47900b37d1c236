"""Named emitter models with power- and field-dependent rates (rates in MHz).

``three-level-spontaneous``
    g <-> e with pumped excitation ``k_ex``, plus a fixed shelving path
    e -> m -> g.
``three-level-pumped``
    as above, but the shelving rates scale with power; they are quoted as
    multiples of the excitation rate relative to its mid value (50 MHz), so
    the mid-power curve coincides with the spontaneous model.
``five-level-spin``
    singlet g/e plus a metastable spin triplet whose sublevels have
    different crossing rates; a magnetic field mixes them.
``nv-nine-level``
    NV- ground and excited spin triplets, a shelving singlet, and the NV0
    ground/excited pair reached by optically driven ionisation and
    recombination (both scale with ``k_ex`` relative to its mid value).
"""
from __future__ import annotations

from ..errors import ConfigError
from .model import RateModel
from .spin import SUBLEVELS, SpinParams, manifold_overlap, spin_mixing

TEMPLATES = ("three-level-spontaneous", "three-level-pumped", "five-level-spin", "nv-nine-level")

# parameter sets, MHz
THREE_LEVEL = {"k_r": 50.0, "k_isc0": 5.0, "k_isc0_out": 2.5, "k_ex_mid": 50.0}
FIVE_LEVEL = {"k_r": 50.0, "k_isc0": 4.9995, "k_isc0_out": 2.5, "k_isc_pm": 2.5e-4, "k_isc_out_pm": 0.025,
              "D": 1000.0, "g": 2.0}
NV = {"k_r": 75.0, "k_isc0": 5.0, "k_isc0_out": 3.11, "k_isc_pm": 60.0, "k_isc_out_pm": 2.75,
      "k_ion": 3.0, "k_rec": 2.25, "k_ex_mid": 26.25,
      "g_ES": 2.01, "g_GS": 2.0028, "D_ES": 1425.0, "D_GS": 2859.0}

POWER_SWEEPS = {
    "three-level-spontaneous": (25.0, 50.0, 100.0),
    "three-level-pumped": (25.0, 50.0, 100.0),
    "five-level-spin": (25.0, 50.0, 100.0),
    "nv-nine-level": (13.125, 26.25, 52.5),
}
ANGLE_SWEEPS = {"five-level-spin": (0.0, 30.0, 60.0), "nv-nine-level": (0.0, 15.0, 50.0)}
FIELD_AMPLITUDES = {"five-level-spin": 46.0, "nv-nine-level": 300.0}


def _field(spin, b_amplitude, b_angle, g, D):
    if spin is not None:
        return spin
    return SpinParams(g, D, float(b_amplitude or 0.0), float(b_angle or 0.0))


def build_model(template: str, k_ex: float, b_amplitude=None, b_angle=0.0, spin=None,
                collection: float = 1.0) -> RateModel:
    """Concrete :class:`RateModel` for a named template.

    Parameters
    ----------
    template : str
        One of :data:`TEMPLATES`.
    k_ex : float
        Excitation rate (MHz).
    b_amplitude, b_angle : float, optional
        Field amplitude (G) and angle to the defect axis (deg) for the spin
        templates.
    spin : SpinParams or dict, optional
        Full spin parameters; for ``nv-nine-level`` a dict with ``"GS"`` and
        ``"ES"`` entries.
    collection : float
        Collection efficiency of every radiative transition.
    """
    if template not in TEMPLATES:
        raise ConfigError(f"unknown template {template!r}; choose from {TEMPLATES}")
    has_field = spin is not None or bool(b_amplitude)
    if template.startswith("three-level") and has_field:
        raise ConfigError(f"template {template!r} has no spin; field parameters are not accepted")
    if not k_ex > 0:
        raise ConfigError("k_ex must be > 0")
    meta = {"template": template, "k_ex_MHz": float(k_ex), "b_amplitude_G": b_amplitude,
            "b_angle_deg": b_angle, "field": bool(has_field)}

    if template in ("three-level-spontaneous", "three-level-pumped"):
        p = THREE_LEVEL
        scale = k_ex / p["k_ex_mid"] if template == "three-level-pumped" else 1.0
        rates = {("g", "e"): k_ex, ("e", "g"): p["k_r"],
                 ("e", "m"): p["k_isc0"] * scale, ("m", "g"): p["k_isc0_out"] * scale}
        return RateModel.from_rates(("g", "e", "m"), rates, {("e", "g"): collection}, template, **meta)

    if template == "five-level-spin":
        p = FIVE_LEVEL
        sp = _field(spin, b_amplitude, b_angle, p["g"], p["D"])
        into = spin_mixing(sp, [p["k_isc0"], p["k_isc_pm"], p["k_isc_pm"]])
        out = spin_mixing(sp, [p["k_isc0_out"], p["k_isc_out_pm"], p["k_isc_out_pm"]])
        triplet = tuple(f"m{s}" for s in SUBLEVELS)
        rates = {("g", "e"): k_ex, ("e", "g"): p["k_r"]}
        for t, ki, ko in zip(triplet, into, out):
            rates[("e", t)] = ki
            rates[(t, "g")] = ko
        return RateModel.from_rates(("g", "e") + triplet, rates, {("e", "g"): collection}, template, **meta)

    p = NV
    if isinstance(spin, dict):
        gs, es = spin["GS"], spin["ES"]
    else:
        if spin is not None:
            raise ConfigError("nv-nine-level needs spin={'GS': SpinParams, 'ES': SpinParams}")
        gs = SpinParams(p["g_GS"], p["D_GS"], float(b_amplitude or 0.0), float(b_angle or 0.0))
        es = SpinParams(p["g_ES"], p["D_ES"], float(b_amplitude or 0.0), float(b_angle or 0.0))
    W = manifold_overlap(es, gs)  # W[j, i] = |<ES_j|GS_i>|^2
    isc = spin_mixing(es, [p["k_isc0"], p["k_isc_pm"], p["k_isc_pm"]])
    isc_out = spin_mixing(gs, [p["k_isc0_out"], p["k_isc_out_pm"], p["k_isc_out_pm"]])
    power = k_ex / p["k_ex_mid"]
    k_ion, k_rec = p["k_ion"] * power, p["k_rec"] * power
    GS = tuple(f"g{s}" for s in SUBLEVELS)
    ES = tuple(f"e{s}" for s in SUBLEVELS)
    labels = GS + ES + ("s", "nv0_g", "nv0_e")
    rates, coll = {}, {}
    for i, g in enumerate(GS):
        for j, e in enumerate(ES):
            if W[j, i] > 0:
                rates[(g, e)] = k_ex * W[j, i]
                rates[(e, g)] = p["k_r"] * W[j, i]
                coll[(e, g)] = collection
    for j, e in enumerate(ES):
        rates[(e, "s")] = isc[j]
        rates[(e, "nv0_g")] = k_ion
    for i, g in enumerate(GS):
        rates[("s", g)] = isc_out[i]
        rates[("nv0_e", g)] = k_rec / 3.0
    rates[("nv0_g", "nv0_e")] = k_ex
    rates[("nv0_e", "nv0_g")] = p["k_r"]
    coll[("nv0_e", "nv0_g")] = collection
    return RateModel.from_rates(labels, rates, coll, template, **meta)


def two_level(gamma_ge: float, gamma_eg: float, collection: float = 1.0) -> RateModel:
    """Ground/excited pair: excitation ``gamma_ge`` (g -> e), emission ``gamma_eg`` (MHz)."""
    return RateModel.from_rates(("g", "e"), {("g", "e"): gamma_ge, ("e", "g"): gamma_eg},
                                {("e", "g"): collection}, "two-level")
