"""Synthetic scenes: static noisy obstacles and dynamic cut-in obstacles.

A ScenarioSpec is a JSON-serializable description of a scene family.
Static families carry a placement box and a noise template; calling
`instantiate(seed)` draws concrete nominal positions, so one spec plus a
seed list gives a benchmark over many random configurations.
"""

import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .frenet import BoundaryConditions, CurvatureProfile, PlannerGains, get_planner
from .risk import ObstacleSampleSet

PRESET_DIR = Path(__file__).resolve().parent / "presets"
CONFIG_ENV = "RKHSPLAN_CONFIG_DIR"

NOISE_KINDS = ("gaussian", "gmm2", "gmm3")


class ScenarioError(ValueError):
    pass


def _check_mixture(means, covs, weights, dim):
    means = np.asarray(means, dtype=float).reshape(-1, dim)
    covs = np.asarray(covs, dtype=float).reshape(-1, dim, dim)
    weights = np.asarray(weights, dtype=float).ravel()
    K = means.shape[0]
    if covs.shape[0] != K or weights.shape[0] != K:
        raise ScenarioError("mixture means, covariances and weights disagree in count")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ScenarioError(f"mixture weights must be non-negative and sum to 1, got {weights}")
    for c in covs:
        if not np.allclose(c, c.T):
            raise ScenarioError("mixture covariance is not symmetric")
        # zero covariance is allowed (degenerate noise); negative directions are not
        if np.linalg.eigvalsh(c).min() < -1e-12:
            raise ScenarioError("mixture covariance is not positive semi-definite")
    return means, covs, weights


def _draw_mixture(rng, means, covs, weights, n):
    comp = rng.choice(weights.shape[0], size=n, p=weights)
    z = rng.standard_normal((n, means.shape[1]))
    out = np.empty_like(z)
    for k in range(weights.shape[0]):
        m = comp == k
        w, V = np.linalg.eigh(covs[k])
        L = V * np.sqrt(np.clip(w, 0.0, None))
        out[m] = means[k] + z[m] @ L.T
    return out, comp


@dataclass(frozen=True)
class NoiseModel:
    """Mixture over (s, d) position offsets."""

    kind: str = "gaussian"
    means: tuple = ((0.0, 0.0),)
    covs: tuple = (((0.25, 0.0), (0.0, 0.04)),)
    weights: tuple = (1.0,)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ScenarioError(f"unknown noise kind {self.kind!r}")
        means, _, _ = _check_mixture(self.means, self.covs, self.weights, 2)
        expected = {"gaussian": 1, "gmm2": 2, "gmm3": 3}[self.kind]
        if means.shape[0] != expected:
            raise ScenarioError(f"{self.kind} noise needs {expected} components, got {means.shape[0]}")

    def arrays(self):
        return _check_mixture(self.means, self.covs, self.weights, 2)


@dataclass(frozen=True)
class SpeedGmm:
    means: tuple = (-2.0, 0.0, 2.0)
    stds: tuple = (0.3, 0.3, 0.3)
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        covs = np.asarray(self.stds, dtype=float) ** 2
        _check_mixture(self.means, covs, self.weights, 1)


@dataclass(frozen=True)
class ObstacleModel:
    kind: str = "static"
    # static
    s: float = 0.0
    d: float = 0.0
    noise: NoiseModel = NoiseModel()
    # dynamic: initial state, nominal speed, lateral intents, speed modes
    v: float = 0.0
    intent_offsets: tuple = (0.0,)
    intent_probs: tuple = (1.0,)
    speed_modes: SpeedGmm = SpeedGmm()
    gains: PlannerGains = PlannerGains()

    def __post_init__(self):
        if self.kind not in ("static", "dynamic"):
            raise ScenarioError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "dynamic":
            probs = np.asarray(self.intent_probs, dtype=float)
            if len(self.intent_offsets) != probs.size or probs.size == 0:
                raise ScenarioError("intent offsets and probabilities disagree")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ScenarioError("intent probabilities must be non-negative and sum to 1")


def sample_static(model: ObstacleModel, n: int, seed, H: int = 50, dt: float = 0.1) -> ObstacleSampleSet:
    """n constant-position trajectories at nominal + noise draw."""
    if model.kind != "static":
        raise ScenarioError("sample_static needs a static obstacle model")
    if n < 1:
        raise ScenarioError("need at least one sample")
    rng = np.random.default_rng(seed)
    means, covs, weights = model.noise.arrays()
    off, _ = _draw_mixture(rng, means, covs, weights, n)
    s = np.repeat(model.s + off[:, :1], H, axis=1)
    d = np.repeat(model.d + off[:, 1:], H, axis=1)
    return ObstacleSampleSet(np.hstack([s, d]), dt)


def sample_dynamic(model: ObstacleModel, n: int, seed, H: int = 50, dt: float = 0.1) -> ObstacleSampleSet:
    """Planner-generated trajectories from sampled (lane offset, speed) setpoints."""
    if model.kind != "dynamic":
        raise ScenarioError("sample_dynamic needs a dynamic obstacle model")
    if n < 1:
        raise ScenarioError("need at least one sample")
    rng = np.random.default_rng(seed)
    offsets = np.asarray(model.intent_offsets, dtype=float)
    b_d = model.d + offsets[rng.choice(offsets.size, size=n, p=np.asarray(model.intent_probs))]
    sm = model.speed_modes
    dv, _ = _draw_mixture(rng, np.asarray(sm.means)[:, None], np.asarray(sm.stds)[:, None, None] ** 2,
                          np.asarray(sm.weights, dtype=float), n)
    b_v = model.v + dv[:, 0]
    planner = get_planner(H, float(dt), model.gains.kappa_p, model.gains.kappa_v)
    # the planner works with s_0 = 0, so plan locally and shift by the start
    bc = BoundaryConditions(v_x_init=model.v, a_x_init=0.0, d_init=model.d,
                            v_y_init=0.0, a_y_init=0.0)
    X = planner.solve_positions(np.column_stack([b_d, b_v]), bc)
    X[:, :H] += model.s
    return ObstacleSampleSet(X, dt)


def sample_obstacle(model: ObstacleModel, n: int, seed, H: int, dt: float) -> ObstacleSampleSet:
    fn = sample_static if model.kind == "static" else sample_dynamic
    return fn(model, n, seed, H, dt)


@dataclass(frozen=True)
class SplitConfig:
    n_opt: int = 100
    n_val: int = 10000
    min_ratio: float = 100.0

    def __post_init__(self):
        if self.n_opt < 1 or self.n_val < 1:
            raise ScenarioError("split sizes must be positive")
        if self.n_val < self.min_ratio * self.n_opt:
            raise ScenarioError(
                f"validation set ({self.n_val}) must be at least {self.min_ratio:g}x "
                f"the optimization set ({self.n_opt})")


def split(model: ObstacleModel, n_opt: int = 100, n_val: int = 10000, seed=0,
          H: int = 50, dt: float = 0.1):
    """Independent optimization and validation draws from the same model."""
    ss = np.random.SeedSequence(seed)
    k_opt, k_val = ss.spawn(2)
    return (sample_obstacle(model, n_opt, k_opt, H, dt),
            sample_obstacle(model, n_val, k_val, H, dt))


@dataclass(frozen=True)
class Lanes:
    d_min: float = -1.75
    d_max: float = 5.25
    centers: tuple = (0.0, 3.5)

    def __post_init__(self):
        if not self.d_min < self.d_max:
            raise ScenarioError("need d_min < d_max")


@dataclass(frozen=True)
class EgoSpec:
    bc: BoundaryConditions = BoundaryConditions(3.0, 0.0, 0.0, 0.0, 0.0)
    v_des: float = 3.0
    d_des: float = 0.0


@dataclass(frozen=True)
class Placement:
    """Random nominal placement of static obstacles inside a box."""

    count: int = 3
    s_range: tuple = (8.0, 14.0)
    d_choices: tuple = (0.0, 3.5)
    d_jitter: float = 0.5
    noise: NoiseModel = NoiseModel()

    def __post_init__(self):
        if self.count < 1:
            raise ScenarioError("placement count must be positive")
        if not self.s_range[0] <= self.s_range[1]:
            raise ScenarioError("placement s_range must be ordered")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scene"
    kind: str = "static"
    lanes: Lanes = Lanes()
    ego: EgoSpec = EgoSpec()
    obstacles: tuple = ()
    placement: Placement = None
    kappa: float = 0.0
    H: int = 50
    dt: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("static", "dynamic"):
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.H < 4 or not self.dt > 0:
            raise ScenarioError("need H >= 4 and dt > 0")
        for ob in self.obstacles:
            if ob.kind != self.kind:
                raise ScenarioError(f"{ob.kind} obstacle in a {self.kind} scenario")

    def instantiate(self, seed=None):
        """Concrete obstacle list; placement draws depend on the seed."""
        if self.placement is None:
            return list(self.obstacles)
        seed = self.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
        p = self.placement
        out = list(self.obstacles)
        for _ in range(p.count):
            s = rng.uniform(*p.s_range)
            d = rng.choice(p.d_choices) + rng.uniform(-p.d_jitter, p.d_jitter)
            out.append(ObstacleModel(kind="static", s=float(s), d=float(d), noise=p.noise))
        return out

    def curvature(self) -> CurvatureProfile:
        return CurvatureProfile.constant(self.kappa) if self.kappa else CurvatureProfile()

    def sample_sets(self, seed=None, n_opt=100, n_val=10000, H=None):
        """Per-obstacle (optimization, validation) sets for one scene instance."""
        seed = self.seed if seed is None else seed
        SplitConfig(n_opt, n_val)
        obs = self.instantiate(seed)
        H = self.H if H is None else H
        out = []
        for j, ob in enumerate(obs):
            out.append(split(ob, n_opt, n_val, [seed, j], H, self.dt))
        return obs, out

    # serialization
    def to_dict(self) -> dict:
        out = _to_plain(asdict(self))
        for ob in out["obstacles"]:
            drop = (("v", "intent_offsets", "intent_probs", "speed_modes", "gains")
                    if ob["kind"] == "static" else ("noise",))
            for k in drop:
                ob.pop(k)
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        validate_dict(data)
        lanes = Lanes(**_tup(data.get("lanes", {})))
        ego_d = dict(data.get("ego", {}))
        bc = BoundaryConditions(**ego_d.pop("bc")) if "bc" in ego_d else EgoSpec().bc
        ego = EgoSpec(bc=bc, **ego_d)
        obstacles = tuple(_obstacle_from(o) for o in data.get("obstacles", []))
        placement = None
        if data.get("placement") is not None:
            p = dict(data["placement"])
            noise = _noise_from(p.pop("noise")) if "noise" in p else NoiseModel()
            placement = Placement(noise=noise, **_tup(p))
        top = {k: data[k] for k in ("name", "kind", "kappa", "H", "dt", "seed") if k in data}
        return cls(lanes=lanes, ego=ego, obstacles=obstacles, placement=placement, **top)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(resolve_scenario_path(path)) as fh:
            return cls.from_dict(json.load(fh))


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _tup(d: dict) -> dict:
    return {k: tuple(_tup_deep(v)) if isinstance(v, list) else v for k, v in d.items()}


def _tup_deep(v):
    return [tuple(_tup_deep(x)) if isinstance(x, list) else x for x in v]


def _noise_from(d: dict) -> NoiseModel:
    return NoiseModel(**_tup(d))


def _obstacle_from(d: dict) -> ObstacleModel:
    d = dict(d)
    if "noise" in d:
        d["noise"] = _noise_from(d["noise"])
    if "speed_modes" in d:
        d["speed_modes"] = SpeedGmm(**_tup(d["speed_modes"]))
    if "gains" in d:
        d["gains"] = PlannerGains(**d["gains"])
    return ObstacleModel(**_tup(d))


SCHEMA = {
    "name": str, "kind": str, "kappa": (int, float), "H": int, "dt": (int, float), "seed": int,
    "lanes": dict, "ego": dict, "obstacles": list, "placement": (dict, type(None)),
}


def validate_dict(data) -> None:
    """Structural check of a scenario document; raises ScenarioError."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(data) - set(SCHEMA)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for key, typ in SCHEMA.items():
        if key in data and not isinstance(data[key], typ):
            raise ScenarioError(f"scenario key {key!r} has the wrong type")
    if "kind" not in data:
        raise ScenarioError("scenario document needs a 'kind'")


def validate_file(path) -> ScenarioSpec:
    """Parse and fully construct a scenario file (all invariants checked)."""
    try:
        spec = ScenarioSpec.load(path)
    except (TypeError, KeyError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    spec.instantiate()
    return spec


def config_dir() -> Path:
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else PRESET_DIR


def resolve_scenario_path(path) -> Path:
    """Existing path as given, else a name looked up in the config directory."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (config_dir() / p, config_dir() / f"{p}.json"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"scenario {path} not found (config dir {config_dir()})")


def list_presets():
    return sorted(p.stem for p in config_dir().glob("*.json"))


def with_ego(spec: ScenarioSpec, bc: BoundaryConditions) -> ScenarioSpec:
    return replace(spec, ego=replace(spec.ego, bc=bc))
