"""Parameter bundles and the flat key-value parameter file format.

A parameter file holds one ``key = value`` per line; ``#`` starts a comment.
Keys follow the symbols of the model (``A_b``, ``Q_b_nom_Ah``, ``P_r_max_W``
...).  Map entries take a CSV path (relative to the file), ``builtin:<name>``
for a shipped map, or ``none``.  ``include = other.params`` pulls in another
file whose keys the including file may override.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .maps import load_table1d, load_table2d
from .ocp import CostCoefficients
from .powertrain import BatteryParams, EguParams, Fidelity
from .vehicle import VehicleParams


@dataclass(frozen=True)
class PowertrainParams:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    battery: BatteryParams = field(default_factory=BatteryParams)
    egu: EguParams = field(default_factory=EguParams)
    costs: CostCoefficients = field(default_factory=CostCoefficients.nominal)
    fidelity: Fidelity = Fidelity.M1
    q0: float = 0.5

    def with_fuel_price(self, gamma_eur_kwh: float) -> "PowertrainParams":
        return replace(self, costs=replace(self.costs, gamma=gamma_eur_kwh / 3.6e6))

    def with_ocv_slope(self, slope: float) -> "PowertrainParams":
        return replace(self, battery=self.battery.with_ocv_slope(slope))


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def read_kv_file(path: str | Path, _seen: tuple[Path, ...] = ()) -> dict[str, str]:
    """Parse a key-value file, resolving ``include`` lines depth-first.

    Relative paths in values (also inside comma lists) are rewritten to
    absolute ones so that included files keep resolving against their own
    directory.
    """
    path = Path(path).resolve()
    if path in _seen:
        raise ValueError(f"include cycle at {path}")
    if not path.exists():
        raise FileNotFoundError(path)
    raw = parse_kv(path.read_text(encoding="utf-8"), str(path))
    merged: dict[str, str] = {}
    for inc in [v for k, v in raw.items() if k == "include"]:
        for part in inc.split(","):
            merged.update(read_kv_file(path.parent / part.strip(), _seen + (path,)))
    for k, v in raw.items():
        if k == "include":
            continue
        parts = [x.strip() for x in v.split(",")]
        if any(_looks_like_path(x) for x in parts):
            v = ", ".join(str((path.parent / x).resolve()) if _looks_like_path(x) else x
                          for x in parts)
        merged[k] = v
    return merged


def _looks_like_path(v: str) -> bool:
    return v.endswith((".csv", ".params", ".cfg")) and not v.startswith("builtin:")


def builtin_path(name: str) -> Path:
    ref = resources.files("hevcost") / "data" / name
    return Path(str(ref))


def _map_path(v: str, kind: str) -> Path | None:
    if v.lower() in ("none", ""):
        return None
    if v.startswith("builtin:"):
        return builtin_path(f"maps/{v[len('builtin:'):]}.csv")
    return Path(v)


_FLOAT_KEYS = {
    # battery
    "A_b": ("battery", "ocv_slope", 1.0), "B_b": ("battery", "ocv_offset", 1.0),
    "v_b_nom": ("battery", "v_nom", 1.0), "R_b_ohm": ("battery", "resistance", 1.0),
    "Q_b_nom_Ah": ("battery", "q_nom", 3600.0), "N_b": ("battery", "n_cycles", 1.0),
    "sigma_b_nom": ("battery", "sigma_nominal", 1.0), "xi_b_init": ("battery", "soh_initial", 1.0),
    "P_b_min_W": ("battery", "p_min", 1.0), "P_b_max_W": ("battery", "p_max", 1.0),
    "q_min": ("battery", "q_min", 1.0), "q_max": ("battery", "q_max", 1.0),
    # engine-generator unit
    "A_r": ("egu", "a_r", 1.0), "B_r_W": ("egu", "b_r", 1.0),
    "lambda_r_J_per_g": ("egu", "lhv", 1.0), "rho_f_kg_per_L": ("egu", "fuel_density", 1.0),
    "P_r_min_W": ("egu", "p_min", 1.0), "P_r_max_W": ("egu", "p_max", 1.0),
    # vehicle
    "M_kg": ("vehicle", "mass", 1.0), "R_w_m": ("vehicle", "wheel_radius", 1.0),
    "C_r": ("vehicle", "roll_coeff", 1.0), "C_v": ("vehicle", "viscous_coeff", 1.0),
    "C_x": ("vehicle", "drag_coeff", 1.0), "A_m2": ("vehicle", "frontal_area", 1.0),
    "rho_air": ("vehicle", "air_density", 1.0), "g": ("vehicle", "gravity", 1.0),
    "r_gear": ("vehicle", "gear_ratio", 1.0), "eta_t": ("vehicle", "trans_efficiency", 1.0),
    "eta_m": ("vehicle", "motor_eff_const", 1.0),
    # costs, stored per joule
    "alpha_EUR_per_kWh": ("costs", "alpha", 1 / 3.6e6),
    "beta_EUR_per_kWh": ("costs", "beta", 1 / 3.6e6),
    "gamma_EUR_per_kWh": ("costs", "gamma", 1 / 3.6e6),
    "eta_grid": ("costs", "eta_grid", 1.0),
    "zeta": ("costs", "zeta", 1.0),
}


def params_from_dict(kv: dict[str, str], base: PowertrainParams | None = None) -> PowertrainParams:
    """Build a :class:`PowertrainParams` by overriding ``base`` with ``kv``.

    Unknown keys are ignored so that experiment configs may share a file
    with parameter entries.
    """
    base = base or PowertrainParams()
    groups = {"battery": {}, "egu": {}, "vehicle": {}, "costs": {}}
    for key, (group, attr, scale) in _FLOAT_KEYS.items():
        if key in kv:
            groups[group][attr] = float(kv[key]) * scale
    if "eta_r_map" in kv:
        p = _map_path(kv["eta_r_map"], "egu")
        groups["egu"]["eta_map"] = load_table1d(p, "P_r_W", "eta") if p else None
    if "sigma_map" in kv:
        p = _map_path(kv["sigma_map"], "sigma")
        groups["battery"]["sigma_map"] = load_table2d(p, "q_b", "i_b_A", "sigma") if p else None
    if "eta_m_map" in kv:
        p = _map_path(kv["eta_m_map"], "motor")
        groups["vehicle"]["motor_eff_map"] = (
            load_table2d(p, "omega_radps", "torque_Nm", "eta",
                         clamp=kv.get("eta_m_map_clamp", "true").lower() == "true")
            if p else None)
    out = replace(
        base,
        battery=replace(base.battery, **groups["battery"]),
        egu=replace(base.egu, **groups["egu"]),
        vehicle=replace(base.vehicle, **groups["vehicle"]),
        costs=replace(base.costs, **groups["costs"]),
    )
    if "fidelity" in kv:
        out = replace(out, fidelity=Fidelity[kv["fidelity"].upper()])
    if "q_b_init" in kv:
        out = replace(out, q0=float(kv["q_b_init"]))
    return out


def load_params(path: str | Path) -> PowertrainParams:
    return params_from_dict(read_kv_file(path), PowertrainParams())


def default_params() -> PowertrainParams:
    """Nominal parameter set with the shipped default maps."""
    return load_params(builtin_path("default.params"))
