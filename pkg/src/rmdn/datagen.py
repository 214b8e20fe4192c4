"""Synthetic confounded image datasets.

Every image holds two "main effect" Gaussian bumps whose magnitude
``sigma_a`` carries the class signal, and one confounder bump whose
magnitude ``sigma_b`` is drawn from group-dependent ranges so that it
correlates with the label. Bumps are unit-peak isotropic Gaussians.

Randomness: each stage ``s`` uses numpy's PCG64 generator seeded with
``SeedSequence(seed, spawn_key=(s,))`` for sampling and rendering, and
``SeedSequence(seed, spawn_key=(s, 1))`` for the train/test split. PCG64
and SeedSequence are platform independent, so datasets are reproducible
bit for bit from ``(schedule, n, stages, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

IMAGE_SIZE = 32
SPREAD = 4.0
GRID_SPREAD = 2.0
NOISE_STD = 0.01
SHIFT_PER_STAGE = 0.125
TEST_FRACTION = 0.2

# quadrant centres (row, col) on a 32 x 32 canvas; quadrant 2 is top-left
Q2 = (8, 8)
Q3 = (24, 8)
Q4 = (24, 24)

SCHEDULES = ("static", "conf_shifts", "main_shifts", "both_shift", "positional")

Range = tuple[float, float]


@dataclass(frozen=True)
class KernelSpec:
    center: tuple[float, float]
    magnitude: float
    spread: float


@dataclass(frozen=True)
class StageSpec:
    stage_id: int
    main_ranges: tuple[Range, Range]  # (group 1, group 2)
    conf_ranges: tuple[Range, Range]
    conf_position: tuple[int, int]
    main_positions: tuple[tuple[int, int], tuple[int, int]] = (Q2, Q4)
    n_images: int = 0
    image_size: int = IMAGE_SIZE
    spread: float = SPREAD

    def as_row(self) -> list[float]:
        (a1, a2), (b1, b2) = self.main_ranges, self.conf_ranges
        return [self.stage_id, *a1, *a2, *b1, *b2, *self.conf_position,
                *self.main_positions[0], *self.main_positions[1], self.n_images, self.image_size, self.spread]

    @classmethod
    def from_row(cls, row) -> "StageSpec":
        r = [float(v) for v in row]
        return cls(
            stage_id=int(r[0]),
            main_ranges=((r[1], r[2]), (r[3], r[4])),
            conf_ranges=((r[5], r[6]), (r[7], r[8])),
            conf_position=(int(r[9]), int(r[10])),
            main_positions=((int(r[11]), int(r[12])), (int(r[13]), int(r[14]))),
            n_images=int(r[15]),
            image_size=int(r[16]),
            spread=r[17],
        )


@dataclass
class SynthDataset:
    images: np.ndarray  # (N, 1, S, S)
    labels: np.ndarray  # (N,) int64, 0 = group 1, 1 = group 2
    confounders: np.ndarray  # (N, 1), the rendered confounder magnitude
    stage_ids: np.ndarray  # (N,) int64
    sigma_a: np.ndarray  # (N,)
    is_test: np.ndarray  # (N,) bool
    stages: list[StageSpec]
    schedule: str
    seed: int
    delta: float = 1.0
    noise_std: float = NOISE_STD
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def indices(self, stage: int, split: str = "train") -> np.ndarray:
        if split not in ("train", "test", "all"):
            raise ParameterError(f"unknown split {split!r}")
        mask = self.stage_ids == stage
        if split == "train":
            mask &= ~self.is_test
        elif split == "test":
            mask &= self.is_test
        return np.flatnonzero(mask)

    def design(self, idx: np.ndarray) -> np.ndarray:
        """Design rows ``[confounders, label, 1]`` for the given examples."""
        lab = self.labels[idx].astype(np.float64)[:, None]
        return np.hstack([self.confounders[idx], lab, np.ones_like(lab)])


def gaussian_bump(size: int, center, spread: float) -> np.ndarray:
    r0, c0 = center
    if not (0 <= r0 < size and 0 <= c0 < size):
        raise ParameterError(f"kernel center {center} outside a {size}x{size} image")
    if spread <= 0:
        raise ParameterError(f"spread must be > 0, got {spread}")
    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]
    return np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2.0 * spread**2))


def render_kernels(kernels, size: int = IMAGE_SIZE, noise_std: float = 0.0, rng=None) -> np.ndarray:
    img = np.zeros((size, size))
    for k in kernels:
        if k.magnitude < 0:
            raise ParameterError("kernel magnitude must be >= 0")
        img = img + k.magnitude * gaussian_bump(size, k.center, k.spread)
    if noise_std > 0:
        img = img + noise_std * np.random.default_rng(rng).standard_normal((size, size))
    return img[None]


def render_image(
    main: float,
    conf: float,
    conf_position=Q3,
    delta: float = 1.0,
    noise_std: float = NOISE_STD,
    rng=None,
    main_positions=(Q2, Q4),
    spread: float = SPREAD,
    size: int = IMAGE_SIZE,
) -> np.ndarray:
    """One (1, size, size) image: two main bumps plus a ``delta``-scaled confounder bump."""
    if not 0.0 <= delta <= 1.0:
        raise ParameterError(f"delta must lie in [0, 1], got {delta}")
    if main < 0 or conf < 0:
        raise ParameterError("kernel magnitudes must be >= 0")
    sa = np.array([float(main)])
    sb = np.array([float(conf)])
    noise = None
    if noise_std > 0:
        noise = np.random.default_rng(rng).standard_normal((1, size, size))
    return _render(sa, sb, conf_position, main_positions, spread, size, delta, noise_std, noise)[0]


def _render(sigma_a, sigma_b, conf_position, main_positions, spread, size, delta, noise_std, noise):
    g_main = gaussian_bump(size, main_positions[0], spread) + gaussian_bump(size, main_positions[1], spread)
    g_conf = gaussian_bump(size, conf_position, spread)
    img = sigma_a[:, None, None] * g_main + (delta * sigma_b)[:, None, None] * g_conf
    if noise is not None:
        img = img + noise_std * noise
    return img[:, None]


def _stage_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _generate(stages: list[StageSpec], schedule: str, seed: int, delta: float, noise_std: float) -> SynthDataset:
    if not 0.0 <= delta <= 1.0:
        raise ParameterError(f"delta must lie in [0, 1], got {delta}")
    parts = []
    for spec in stages:
        n = spec.n_images
        if n % 2:
            raise ParameterError(f"images per stage must be even, got {n}")
        rng = _stage_rng(seed, spec.stage_id)
        half = n // 2
        labels = rng.permutation(np.repeat(np.array([0, 1], dtype=np.int64), half))
        sigma_a = np.empty(n)
        sigma_b = np.empty(n)
        for g in (0, 1):
            sel = labels == g
            sigma_a[sel] = rng.uniform(*spec.main_ranges[g], size=half)
            sigma_b[sel] = rng.uniform(*spec.conf_ranges[g], size=half)
        noise = rng.standard_normal((n, spec.image_size, spec.image_size))
        images = _render(sigma_a, sigma_b, spec.conf_position, spec.main_positions, spec.spread,
                         spec.image_size, delta, noise_std, noise)
        split_rng = _stage_rng(seed, spec.stage_id, 1)
        is_test = np.zeros(n, dtype=bool)
        n_test = int(round(TEST_FRACTION * half))
        for g in (0, 1):
            members = np.flatnonzero(labels == g)
            is_test[split_rng.choice(members, size=n_test, replace=False)] = True
        parts.append((images, labels, delta * sigma_b, np.full(n, spec.stage_id, dtype=np.int64), sigma_a, is_test))
    cat = [np.concatenate(p) for p in zip(*parts)]
    return SynthDataset(
        images=cat[0],
        labels=cat[1],
        confounders=cat[2][:, None],
        stage_ids=cat[3],
        sigma_a=cat[4],
        is_test=cat[5],
        stages=list(stages),
        schedule=schedule,
        seed=seed,
        delta=delta,
        noise_std=noise_std,
    )


def static_stages(n: int = 2048) -> list[StageSpec]:
    if n % 2 or n <= 0:
        raise ParameterError(f"n must be a positive even number, got {n}")
    ranges = ((1.0, 4.0), (3.0, 6.0))
    return [StageSpec(0, ranges, ranges, Q3, n_images=n)]


def continual_stages(schedule: str, stages: int = 5, n_per_stage: int = 1024) -> list[StageSpec]:
    """Stage ranges for the three shift schedules.

    Stage 1 uses U(3, 5) for group 1 and U(4, 6) for group 2 for both
    magnitudes. Each later stage moves the shifted ranges by 0.125: the
    confounder ranges apart, the main-effect ranges together.
    """
    if schedule not in ("conf_shifts", "main_shifts", "both_shift"):
        raise ParameterError(f"unknown schedule {schedule!r}")
    if stages < 2:
        raise ParameterError(f"need at least 2 stages, got {stages}")
    if n_per_stage % 2 or n_per_stage <= 0:
        raise ParameterError(f"n_per_stage must be a positive even number, got {n_per_stage}")
    shift_conf = schedule in ("conf_shifts", "both_shift")
    shift_main = schedule in ("main_shifts", "both_shift")
    out = []
    for s in range(stages):
        d = SHIFT_PER_STAGE * s
        dm = d if shift_main else 0.0
        dc = d if shift_conf else 0.0
        main = ((3.0 + dm, 5.0 + dm), (4.0 - dm, 6.0 - dm))
        conf = ((3.0 - dc, 5.0 - dc), (4.0 + dc, 6.0 + dc))
        out.append(StageSpec(s, main, conf, Q3, n_images=n_per_stage))
    return out


def positional_stages(stages: int = 4, n_per_stage: int = 1024) -> list[StageSpec]:
    """Confounder bump walks the anti-diagonal of a 4 x 4 grid of 8 x 8 cells."""
    if stages < 1:
        raise ParameterError(f"need at least 1 stage, got {stages}")
    if n_per_stage % 2 or n_per_stage <= 0:
        raise ParameterError(f"n_per_stage must be a positive even number, got {n_per_stage}")
    cell = IMAGE_SIZE // 4
    ranges = ((3.0, 5.0), (4.0, 6.0))
    main_pos = ((cell // 2, cell // 2), (IMAGE_SIZE - cell // 2, IMAGE_SIZE - cell // 2))
    out = []
    for s in range(stages):
        j = 0 if stages == 1 else int(round(3 * s / (stages - 1)))
        pos = ((3 - j) * cell + cell // 2, j * cell + cell // 2)
        out.append(StageSpec(s, ranges, ranges, pos, main_positions=main_pos, n_images=n_per_stage, spread=GRID_SPREAD))
    return out


def gen_static(n: int = 2048, seed: int = 0, delta: float = 1.0, noise_std: float = NOISE_STD) -> SynthDataset:
    return _generate(static_stages(n), "static", seed, delta, noise_std)


def gen_continual(schedule: str, stages: int = 5, n_per_stage: int = 1024, seed: int = 0,
                  delta: float = 1.0, noise_std: float = NOISE_STD) -> SynthDataset:
    return _generate(continual_stages(schedule, stages, n_per_stage), schedule, seed, delta, noise_std)


def gen_positional(stages: int = 4, n: int = 1024, seed: int = 0, delta: float = 1.0,
                   noise_std: float = NOISE_STD) -> SynthDataset:
    """``n`` images per stage."""
    return _generate(positional_stages(stages, n), "positional", seed, delta, noise_std)


def generate(schedule: str, n: int, seed: int, stages: int | None = None, delta: float = 1.0,
             noise_std: float = NOISE_STD) -> SynthDataset:
    """Dispatch on schedule name. ``n`` is the total for ``static``, per stage otherwise."""
    if schedule == "static":
        return gen_static(n, seed, delta, noise_std)
    if schedule == "positional":
        return gen_positional(stages or 4, n, seed, delta, noise_std)
    if schedule in ("conf_shifts", "main_shifts", "both_shift"):
        return gen_continual(schedule, stages or 5, n, seed, delta, noise_std)
    raise ParameterError(f"unknown schedule {schedule!r}; expected one of {SCHEDULES}")


def rerender(ds: SynthDataset, delta: float) -> SynthDataset:
    """Regenerate ``ds`` with the confounder scaled by ``delta``.

    Noise, labels, magnitudes and the split are identical to the original.
    """
    return _generate(ds.stages, ds.schedule, ds.seed, delta, ds.noise_std)


def theoretical_max(range1: Range, range2: Range) -> float:
    """Best accuracy from main effects alone for two equal-width uniform groups."""
    (l1, h1), (l2, h2) = range1, range2
    w1, w2 = h1 - l1, h2 - l2
    if w1 <= 0 or w2 <= 0:
        raise ParameterError(f"degenerate range {range1} / {range2}")
    if abs(w1 - w2) > 1e-12 * max(w1, w2):
        raise ParameterError(f"ranges must have equal widths, got {w1} and {w2}")
    overlap = max(0.0, min(h1, h2) - max(l1, l2))
    return 1.0 - overlap / (2.0 * w1)


def stage_maxima(ds: SynthDataset) -> np.ndarray:
    return np.array([theoretical_max(*s.main_ranges) for s in ds.stages])


_SCHED_CODE = {name: i for i, name in enumerate(SCHEDULES)}


def dataset_to_tensors(ds: SynthDataset) -> dict[str, np.ndarray]:
    return {
        "images": ds.images,
        "labels": ds.labels.astype(np.int64),
        "confounders": ds.confounders,
        "stage_ids": ds.stage_ids.astype(np.int64),
        "sigma_a": ds.sigma_a,
        "is_test": ds.is_test.astype(np.int64),
        "stages": np.array([s.as_row() for s in ds.stages], dtype=np.float64),
        "meta.schedule": np.array([_SCHED_CODE[ds.schedule]], dtype=np.int64),
        "meta.seed": np.array([ds.seed], dtype=np.int64),
        "meta.delta": np.array([ds.delta]),
        "meta.noise_std": np.array([ds.noise_std]),
    }


def dataset_from_tensors(t: dict[str, np.ndarray]) -> SynthDataset:
    return SynthDataset(
        images=t["images"],
        labels=t["labels"].astype(np.int64),
        confounders=t["confounders"],
        stage_ids=t["stage_ids"].astype(np.int64),
        sigma_a=t["sigma_a"],
        is_test=t["is_test"].astype(bool),
        stages=[StageSpec.from_row(r) for r in t["stages"]],
        schedule=SCHEDULES[int(t["meta.schedule"][0])],
        seed=int(t["meta.seed"][0]),
        delta=float(t["meta.delta"][0]),
        noise_std=float(t["meta.noise_std"][0]),
    )
