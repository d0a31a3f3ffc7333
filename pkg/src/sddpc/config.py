"""Benchmark configuration: named built-ins and a key/value file format.

Files hold one ``key = value`` pair per line (matrix literals as nested
lists, ``inf`` allowed in bounds); ``#`` starts a comment.  The aircraft
benchmark ships as the built-in named ``aircraft``.
"""

import ast
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .lti import ArxModel
from .terminal import Box


@dataclass(frozen=True)
class BenchmarkConfig:
    name: str
    Phi: np.ndarray
    D: np.ndarray
    T_ini: int
    Sigma_W: np.ndarray
    n_x: int
    N: int
    Q: np.ndarray
    R: np.ndarray
    eps_u: float
    eps_y: float
    u_lb: np.ndarray
    u_ub: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray
    T_synth: int
    T_ocp: int
    seed: int
    runs: int
    steps: int
    norm_convention: str = "plain"        # "plain" | "half"
    gaussian_sigma: bool = False          # Gaussian-quantile chance tightening
    excitation_lb: np.ndarray | None = None
    excitation_ub: np.ndarray | None = None
    eps_z: float | None = None            # overrides the bisection calibration
    disturbance_family: str = "hermite"

    def model(self) -> ArxModel:
        return ArxModel(self.Phi, self.D, self.T_ini, self.Sigma_W, self.n_x)

    def u_box(self) -> Box:
        return Box(self.u_lb, self.u_ub)

    def y_box(self) -> Box:
        return Box(self.y_lb, self.y_ub)

    def excitation_box(self):
        n_u = self.D.shape[1]
        lb = self.excitation_lb if self.excitation_lb is not None else -np.ones(n_u)
        ub = self.excitation_ub if self.excitation_ub is not None else np.ones(n_u)
        return lb, ub

    @property
    def norm_half(self) -> bool:
        return self.norm_convention == "half"


# Aircraft benchmark: three-output pitch-channel model sampled at 0.5 s,
# driven by i.i.d. Gaussian disturbances, with a two-sided bound on the
# first output at the 10% risk level.
_AIRCRAFT_PHI = [
    [-0.019, -1.440, -0.201, 0.256, 0.050, 0.160, -0.256, 0.0860],
    [0.711, -1.800, -4.773, 3.6875, 0.650, 2.982, -2.688, 1.707],
    [1.444, -26.922, -15.746, 12.898, 2.319, 10.461, -12.897, 5.171],
]

_BUILTINS = {}


def _register_aircraft():
    inf = math.inf
    cfg = BenchmarkConfig(
        name="aircraft",
        Phi=np.array(_AIRCRAFT_PHI),
        D=np.zeros((3, 1)),
        T_ini=2,
        Sigma_W=np.diag([0.0001, 1.0, 0.01]),
        n_x=4,
        N=10,
        Q=np.eye(3),
        R=np.array([[1.0]]),
        eps_u=0.1,
        eps_y=0.1,
        u_lb=np.array([-inf]),
        u_ub=np.array([inf]),
        y_lb=np.array([-1.0, -inf, -inf]),
        y_ub=np.array([1.0, inf, inf]),
        T_synth=22,
        T_ocp=90,
        seed=7,
        runs=50,
        steps=40,
        gaussian_sigma=True,
        # The bisection certification is infeasible for this plant: the
        # covariance budget gamma inherits the worst-case factor
        # lambda_max(Gamma) ~ 3e4 from the highly non-normal closed loop, so
        # the certified standard-deviation term alone exceeds the unit output
        # box.  The level below bounds the terminal mean set by the
        # deterministic part of the certification instead (support of the
        # constrained output row over the ellipsoid stays inside the box).
        eps_z=1.9,
    )
    _BUILTINS["aircraft"] = cfg


def _register_scalar():
    # Small single-input single-output fixture used by the validation suite.
    cfg = BenchmarkConfig(
        name="scalar",
        Phi=np.array([[1.0, 0.5]]),
        D=np.array([[0.0]]),
        T_ini=1,
        Sigma_W=np.array([[0.04]]),
        n_x=2,
        N=4,
        Q=np.array([[1.0]]),
        R=np.array([[0.2]]),
        eps_u=0.2,
        eps_y=0.2,
        u_lb=np.array([-math.inf]),
        u_ub=np.array([math.inf]),
        y_lb=np.array([-4.0]),
        y_ub=np.array([4.0]),
        T_synth=30,
        T_ocp=40,
        seed=7,
        runs=20,
        steps=30,
    )
    _BUILTINS["scalar"] = cfg


_register_aircraft()
_register_scalar()

_ARRAY_FIELDS = {"Phi", "D", "Sigma_W", "Q", "R", "u_lb", "u_ub", "y_lb", "y_ub",
                 "excitation_lb", "excitation_ub"}
_INT_FIELDS = {"T_ini", "n_x", "N", "T_synth", "T_ocp", "seed", "runs", "steps"}
_FLOAT_FIELDS = {"eps_u", "eps_y", "eps_z"}
_STR_FIELDS = {"name", "norm_convention", "disturbance_family"}
_BOOL_FIELDS = {"gaussian_sigma"}


def builtin_config(name: str) -> BenchmarkConfig:
    if name not in _BUILTINS:
        raise KeyError(f"unknown built-in config {name!r}; have {sorted(_BUILTINS)}")
    return _BUILTINS[name]


_INF_TOKEN = re.compile(r"(?<![\w.])([+-]?)inf(?![\w.])", re.IGNORECASE)


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    subbed = _INF_TOKEN.sub(lambda m: f'"{m.group(1)}inf"', text)
    try:
        parsed = ast.literal_eval(subbed)
    except (ValueError, SyntaxError):
        return text  # bare string value

    def back(v):
        if isinstance(v, str) and v.lstrip("+-").lower() == "inf":
            return -math.inf if v.startswith("-") else math.inf
        if isinstance(v, (list, tuple)):
            return [back(x) for x in v]
        return v

    return back(parsed)


def load_config(path_or_name: str) -> BenchmarkConfig:
    """Resolve a built-in name or parse a key/value config file."""
    if path_or_name in _BUILTINS:
        return _BUILTINS[path_or_name]
    path = Path(path_or_name)
    if not path.exists():
        raise FileNotFoundError(f"no built-in or file named {path_or_name!r}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        values[key.strip()] = _parse_value(raw)
    base = values.pop("base", None)
    if base is not None:
        cfg = builtin_config(base)
        kwargs = {}
    else:
        cfg = None
        kwargs = {"name": str(path.stem)}
    for key, val in values.items():
        if key in _ARRAY_FIELDS:
            kwargs[key] = np.array(val, dtype=float)
        elif key in _INT_FIELDS:
            kwargs[key] = int(val)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(val)
        elif key in _BOOL_FIELDS:
            kwargs[key] = bool(val)
        elif key in _STR_FIELDS:
            kwargs[key] = str(val)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if cfg is not None:
        return replace(cfg, **kwargs)
    return BenchmarkConfig(**kwargs)
