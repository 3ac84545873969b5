"""Scalar problems written in the expression language, and the preset catalog."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Lipschitz, ProblemSpec
from .errors import ConfigurationError
from .expr import Expression
from .pde import ControlSet, HjbSpec

__all__ = ["ScalarProblem", "PRESETS", "preset_names", "parse_control"]

_ALLOWED = {
    "sigma": {"t", "x"},
    "f": {"s", "t", "x", "y", "z", "u", "v"},
    "xi": {"s", "x"},
    "ds_xi": {"s", "x"},
    "ds_f": {"s", "t", "x", "y", "z", "u", "v"},
    "dy_f": {"s", "t", "x", "y", "z", "u", "v"},
    "dz_f": {"s", "t", "x", "y", "z", "u", "v"},
    "bar_f": {"s", "t", "x", "a"},
}


def _shape(*vals):
    return np.broadcast_shapes(*(np.shape(v) for v in vals))


def _eval(expr: Expression, env: dict) -> np.ndarray:
    shape = _shape(*env.values())
    return np.broadcast_to(np.asarray(expr(env), dtype=float), shape)


def parse_control(text: str) -> tuple:
    """``"a0, a1, ..."`` or ``"lo:hi:count"`` (inclusive, evenly spaced)."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            pts = np.linspace(float(lo), float(hi), int(count))
        else:
            pts = np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse control set {text!r}: {exc}") from None
    return tuple(float(p) for p in ControlSet(pts).points)


@dataclass(frozen=True)
class ScalarProblem:
    """A one-dimensional problem (``n = m = d = 1``) given by expressions.

    ``kind`` is ``"bsvie"`` (uses ``f``, and ``b(t, x)`` as optional drift) or
    ``"hjb"`` (uses ``bar_f``, ``b(t, x, a)`` and ``control``).  Partial
    derivatives are derived symbolically unless supplied.
    """

    sigma: Expression
    xi: Expression
    f: Optional[Expression] = None
    b: Optional[Expression] = None
    bar_f: Optional[Expression] = None
    control: Optional[tuple] = None
    x0: float = 0.0
    ds_f: Optional[Expression] = None
    dy_f: Optional[Expression] = None
    dz_f: Optional[Expression] = None
    ds_xi: Optional[Expression] = None
    lipschitz_f: Optional[float] = None
    lipschitz_ds_f: Optional[float] = None
    solver: str = "full"
    preset: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind == "bsvie" and self.f is None:
            raise ConfigurationError("problem.preset or problem.f required")
        if self.solver not in ("full", "simplified"):
            raise ConfigurationError(f"problem.solver must be 'full' or 'simplified', got {self.solver!r}")
        allowed = dict(_ALLOWED)
        allowed["b"] = {"t", "x", "a"} if self.kind == "hjb" else {"t", "x"}
        for name, ok in allowed.items():
            e = getattr(self, name)
            if e is not None and not e.variables <= ok:
                extra = ", ".join(sorted(e.variables - ok))
                raise ConfigurationError(f"problem.{name} may not use variable(s) {extra}")
        if self.solver == "simplified" and self.f is not None and "v" in self.f.variables:
            raise ConfigurationError("problem.solver = simplified needs an f without the Z-diagonal variable v")
        if self.kind == "hjb" and not self.control:
            raise ConfigurationError("problem.control required when problem.bar_f is given")

    @property
    def kind(self) -> str:
        return "hjb" if self.bar_f is not None else "bsvie"

    # derived partials
    def _partial(self, given, var):
        return given if given is not None else self.f.diff(var)

    @property
    def derived_ds_xi(self) -> Expression:
        return self.ds_xi if self.ds_xi is not None else self.xi.diff("s")

    @property
    def sigma_max(self) -> Optional[float]:
        return abs(self.sigma.constant_value) if self.sigma.is_constant else None

    @property
    def deterministic(self) -> bool:
        return self.sigma.is_constant and self.sigma.constant_value == 0.0

    def to_spec(self) -> ProblemSpec:
        if self.kind != "bsvie":
            raise ConfigurationError("an HJB problem has no BSVIE specification")
        f = self.f
        ds_f, dy_f, dz_f = self._partial(self.ds_f, "s"), self._partial(self.dy_f, "y"), self._partial(self.dz_f, "z")

        def gen_env(s, t, x, y, z, u, v):
            return {"s": s, "t": t, "x": x[..., 0], "y": y[..., 0], "z": z[..., 0, 0],
                    "u": u[..., 0], "v": v[..., 0, 0]}

        def vec(e):
            return lambda *args: _eval(e, gen_env(*args))[..., None]

        def mat(e):
            return lambda *args: _eval(e, gen_env(*args))[..., None, None]

        sigma = self.sigma
        xi, ds_xi = self.xi, self.derived_ds_xi
        drift = None
        if self.b is not None:
            b = self.b
            drift = lambda t, x: _eval(b, {"t": t, "x": x[..., 0]})[..., None]
        return ProblemSpec(
            n=1, m=1, d=1, x0=[self.x0],
            sigma=lambda t, x: _eval(sigma, {"t": t, "x": x[..., 0]})[..., None, None],
            f=vec(f), ds_f=vec(ds_f), dy_f=mat(dy_f), dz_f=[mat(dz_f)],
            xi=lambda s, x: _eval(xi, {"s": s, "x": x[..., 0]})[..., None],
            ds_xi=lambda s, x: _eval(ds_xi, {"s": s, "x": x[..., 0]})[..., None],
            drift_b=drift,
            sigma_max=self.sigma_max,
            lipschitz=Lipschitz(self.lipschitz_f, self.lipschitz_ds_f),
            z_diagonal_in_generator="v" in f.variables,
            name=self.preset,
        )

    def to_hjb(self) -> HjbSpec:
        if self.kind != "hjb":
            raise ConfigurationError("problem has no bar_f; not an HJB problem")
        bar_f, sigma, xi = self.bar_f, self.sigma, self.xi
        b = self.b if self.b is not None else Expression("0")
        ds_bar = self.bar_f.diff("s")
        ds_xi = self.derived_ds_xi
        return HjbSpec(
            bar_f=lambda s, t, x, a: _eval(bar_f, {"s": s, "t": t, "x": x, "a": a}),
            ds_bar_f=lambda s, t, x, a: _eval(ds_bar, {"s": s, "t": t, "x": x, "a": a}),
            b=lambda t, x, a: _eval(b, {"t": t, "x": x, "a": a}),
            sigma=lambda t, x: _eval(sigma, {"t": t, "x": x}),
            xi=lambda s, x: _eval(xi, {"s": s, "x": x}),
            ds_xi=lambda s, x: _eval(ds_xi, {"s": s, "x": x}),
            control=ControlSet(np.array(self.control)),
            x0=self.x0,
        )


# name -> problem keys (expression text), section defaults, summary, closed-form Y_0^0(T)
PRESETS: dict = {
    "zero": {
        "problem": {"sigma": "1", "f": "0", "xi": "0"},
        "defaults": {"grids": {"M": 20}, "mc": {"n_paths": 1000}},
        "summary": "zero data; every output vanishes",
        "y0": lambda T: 0.0,
    },
    "exp_diag": {
        "problem": {"sigma": "0", "f": "u", "xi": "1"},
        "defaults": {},
        "summary": "deterministic diagonal coupling f = Y_t^t, solution exp(T - t)",
        "y0": math.exp,
    },
    "brownian_identity": {
        "problem": {"sigma": "1", "f": "0", "xi": "x"},
        "defaults": {"grids": {"M": 50}, "mc": {"n_paths": 10000}, "pde": {"enable": True}},
        "summary": "xi = x with Brownian X; Y_t^s = X_t and Z = 1",
        "y0": lambda T: 0.0,
    },
    "cond_expectation": {
        "problem": {"sigma": "1", "f": "0", "xi": "s * x"},
        "defaults": {"grids": {"M": 50}, "mc": {"n_paths": 10000}},
        "summary": "xi = s x; Y_t^s = s X_t and Z_t^t = t",
        "y0": lambda T: 0.0,
    },
    "s_squared": {
        "problem": {"sigma": "1", "f": "0", "xi": "s^2"},
        "defaults": {"grids": {"M": 20}, "mc": {"n_paths": 200}},
        "summary": "xi = s^2; exercises the s-antiderivative identity",
        "y0": lambda T: 0.0,
    },
    "linear_z": {
        "problem": {"sigma": "1", "f": "z + 0.5 * v", "xi": "s * x", "lipschitz_f": "1.5"},
        "defaults": {"grids": {"M": 50}, "mc": {"n_paths": 10000}},
        "summary": "linear in own z and in the Z-diagonal; Y_t^s = s X_t + s (T - t) + (T^2 - t^2) / 4",
        "y0": lambda T: 0.25 * T * T,
    },
    "sin_nonlinear": {
        "problem": {"sigma": "1", "f": "0.5 * sin(y) + 0.5 * u", "xi": "s + 0.5 * x",
                    "lipschitz_f": "1", "lipschitz_ds_f": "0"},
        "defaults": {"grids": {"M": 50}, "mc": {"n_paths": 10000}, "pde": {"enable": True}},
        "summary": "Lipschitz nonlinearity in own y plus Y-diagonal coupling",
        "y0": None,
    },
    "wy_vs_bkm_controlfree": {
        "problem": {"sigma": "0.5", "bar_f": "sin(3 * s) * cos(t) + s * x", "b": "0", "control": "0",
                    "xi": "sin(2 * s) * x + cos(s)"},
        "defaults": {"grids": {"M": 50}, "pde": {"enable": True}},
        "summary": "control-free equilibrium HJB with genuine s-dependence",
        "y0": None,
    },
    "hjb_s_independent": {
        "problem": {"sigma": "0.5", "bar_f": "-0.5 * a^2 - 0.1 * x^2", "b": "a",
                    "control": "-1:1:9", "xi": "cos(x)"},
        "defaults": {"grids": {"M": 50}, "pde": {"enable": True}},
        "summary": "classical (time-consistent) control problem; both HJB forms coincide",
        "y0": None,
    },
    "wy_tracking": {
        "problem": {"sigma": "0.05", "bar_f": "-(a - s)^2", "b": "0", "control": "0:1:21", "xi": "0"},
        "defaults": {"grids": {"M": 100, "dx": 0.02}, "pde": {"enable": True}},
        "summary": "time-inconsistent tracking reward -(a - s)^2 over a 21-point control grid",
        "y0": None,
    },
}


def preset_names() -> list:
    return sorted(PRESETS)
