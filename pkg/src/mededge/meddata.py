"""Vocabularies, synthetic labeled data, the Bayes oracle, augmentation
and the binary record-file format.

The synthetic world stands in for the unavailable clinical corpora: it
owns the disease priors and per-disease symptom probabilities, so the
exact Bayes posterior is computable and serves as the reference
classifier every accuracy criterion is measured against.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InputError
from .tensor import round_half_away

FULL_N_SYMPTOMS = 237
FULL_N_DISEASES = 1537
DESK_N_SYMPTOMS = 50
DESK_N_DISEASES = 100
SKIN_CLASSES = 26
SKIN_IMAGE_SIZE = 32

DEFAULT_NOISE_RATE = 0.02
MIN_SIGNATURE_SYMPTOMS = 3


# ---------------------------------------------------------------------------
# vocabularies
# ---------------------------------------------------------------------------


@dataclass
class SymptomVocabulary:
    names: list[str]

    def __post_init__(self):
        self.names = [n.strip().lower() for n in self.names]
        if len(set(self.names)) != len(self.names):
            raise DataError("symptom names are not unique")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name.strip().lower()]

    def __contains__(self, name: str) -> bool:
        return name.strip().lower() in self._index

    @classmethod
    def generate(cls, n: int, prefix: str = "symptom") -> "SymptomVocabulary":
        width = max(2, len(str(n - 1)))
        return cls([f"{prefix}_{i:0{width}d}" for i in range(n)])

    @classmethod
    def from_file(cls, path) -> "SymptomVocabulary":
        lines = Path(path).read_text().splitlines()
        return cls([ln for ln in lines if ln.strip()])

    def to_file(self, path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n")


@dataclass
class DiseaseCatalog:
    names: list[str]
    treatments: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.names = [n.strip().lower() for n in self.names]
        if len(set(self.names)) != len(self.names):
            raise DataError("disease names are not unique")

    def __len__(self) -> int:
        return len(self.names)

    def treatment(self, disease_id: int) -> str:
        return self.treatments.get(disease_id, "")

    @classmethod
    def generate(cls, n: int, seed: int = 0, prefix: str = "disease") -> "DiseaseCatalog":
        width = max(2, len(str(n - 1)))
        names = [f"{prefix}_{i:0{width}d}" for i in range(n)]
        rng = np.random.default_rng((abs(seed), 0xD15EA5E))
        remedies = (
            "rest and oral fluids",
            "topical ointment twice daily",
            "course of oral antibiotics",
            "antihistamine as needed",
            "warm compresses and monitoring",
            "analgesic and follow-up in one week",
        )
        treatments = {}
        for i in range(n):
            # the source table is known to be incomplete; leave gaps
            if rng.random() < 0.85:
                treatments[i] = remedies[int(rng.integers(len(remedies)))]
        return cls(names, treatments)

    @classmethod
    def from_files(cls, names_path, treatments_path=None) -> "DiseaseCatalog":
        lines = Path(names_path).read_text().splitlines()
        names = [ln for ln in lines if ln.strip()]
        treatments = {}
        if treatments_path is not None and Path(treatments_path).exists():
            for ln in Path(treatments_path).read_text().splitlines():
                if not ln.strip():
                    continue
                idx, _, text = ln.partition("\t")
                treatments[int(idx)] = text
        return cls(names, treatments)

    def to_files(self, names_path, treatments_path) -> None:
        Path(names_path).write_text("\n".join(self.names) + "\n")
        lines = [f"{i}\t{t}" for i, t in sorted(self.treatments.items())]
        Path(treatments_path).write_text("\n".join(lines) + "\n")


def encode_symptoms(names, vocab: SymptomVocabulary) -> np.ndarray:
    """Multi-hot f32 vector over the vocabulary; unknown names rejected."""
    unknown = sorted({n for n in names if n not in vocab})
    if unknown:
        raise InputError(f"unknown symptoms: {', '.join(unknown)}", offenders=unknown)
    vec = np.zeros(len(vocab), np.float32)
    for n in names:
        vec[vocab.index(n)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# synthetic world + Bayes oracle
# ---------------------------------------------------------------------------


@dataclass
class SyntheticWorld:
    priors: np.ndarray         # (n_diseases,), sums to 1
    symptom_probs: np.ndarray  # (n_diseases, n_symptoms) in [0.01, 0.99]
    noise_rate: float
    seed: int

    @property
    def n_diseases(self) -> int:
        return len(self.priors)

    @property
    def n_symptoms(self) -> int:
        return self.symptom_probs.shape[1]

    def to_file(self, path) -> None:
        payload = {
            "priors": [repr(float(p)) for p in self.priors],
            "symptom_probs": [
                [repr(float(p)) for p in row] for row in self.symptom_probs
            ],
            "noise_rate": self.noise_rate,
            "seed": self.seed,
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_file(cls, path) -> "SyntheticWorld":
        payload = json.loads(Path(path).read_text())
        return cls(
            priors=np.array([float(p) for p in payload["priors"]]),
            symptom_probs=np.array(
                [[float(p) for p in row] for row in payload["symptom_probs"]]
            ),
            noise_rate=payload["noise_rate"],
            seed=payload["seed"],
        )


def _world_violations(world: SyntheticWorld) -> list[str]:
    bad = []
    if abs(float(world.priors.sum()) - 1.0) > 1e-9:
        bad.append("priors do not sum to 1")
    p = world.symptom_probs
    if p.min() < 0.01 - 1e-12 or p.max() > 0.99 + 1e-12:
        bad.append("symptom probabilities outside [0.01, 0.99]")
    strong = (p > 0.5).sum(axis=1)
    weak = np.flatnonzero(strong < MIN_SIGNATURE_SYMPTOMS)
    if len(weak):
        bad.append(
            f"{len(weak)} diseases have fewer than {MIN_SIGNATURE_SYMPTOMS} "
            f"strong symptoms (first: disease {weak[0]})"
        )
    return bad


def generate_world(
    n_symptoms: int,
    n_diseases: int,
    seed: int,
    noise_rate: float = DEFAULT_NOISE_RATE,
    max_attempts: int = 100,
) -> SyntheticWorld:
    """Random world with identifiable diseases (>= 3 strong symptoms each)."""
    if n_symptoms < 10:
        raise InputError("need at least 10 symptoms")
    if n_diseases < 2:
        raise InputError("need at least 2 diseases")
    last_bad: list[str] = []
    for attempt in range(max_attempts):
        rng = np.random.default_rng((abs(seed), attempt))
        priors = rng.dirichlet(np.full(n_diseases, 3.0))
        base = rng.beta(0.6, 4.0, size=(n_diseases, n_symptoms))
        probs = np.clip(base, 0.01, 0.99)
        n_sig = MIN_SIGNATURE_SYMPTOMS + 1
        for d in range(n_diseases):
            sig = rng.choice(n_symptoms, size=n_sig, replace=False)
            probs[d, sig] = rng.uniform(0.60, 0.95, size=n_sig)
        world = SyntheticWorld(priors, probs, noise_rate, seed)
        last_bad = _world_violations(world)
        if not last_bad:
            return world
    raise DataError(
        f"could not generate an identifiable world after {max_attempts} attempts: "
        + "; ".join(last_bad)
    )


@dataclass
class LabeledSample:
    """Exactly one modality: a multi-hot symptom vector or an image."""

    label: int
    symptoms: np.ndarray | None = None  # f32 (n_symptoms,)
    image: np.ndarray | None = None     # u8 (h, w, 3)

    def __post_init__(self):
        if (self.symptoms is None) == (self.image is None):
            raise DataError("sample must set exactly one of symptoms/image")

    def features(self) -> np.ndarray:
        if self.symptoms is not None:
            return self.symptoms
        return self.image.astype(np.float32) / 255.0


def sample_dataset(world: SyntheticWorld, n: int, seed: int) -> list[LabeledSample]:
    """Draw disease ~ priors, symptoms ~ Bernoulli(P[d]), flip bits at the
    noise rate. Deterministic per seed."""
    rng = np.random.default_rng((abs(seed), 0x5A11AD))
    if n == 0:
        return []
    labels = rng.choice(world.n_diseases, size=n, p=world.priors)
    draws = rng.random((n, world.n_symptoms)) < world.symptom_probs[labels]
    flips = rng.random((n, world.n_symptoms)) < world.noise_rate
    bits = np.logical_xor(draws, flips).astype(np.float32)
    return [LabeledSample(label=int(l), symptoms=bits[i]) for i, l in enumerate(labels)]


def samples_to_arrays(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise DataError("no samples")
    x = np.stack([s.features() for s in samples])
    y = np.array([s.label for s in samples], np.int64)
    return x, y


def bayes_posterior(world: SyntheticWorld, symptom_vector) -> np.ndarray:
    """Exact posterior over diseases given a binary symptom vector.

    posterior[d] ~ prior[d] * prod_s P[d,s]^x_s * (1-P[d,s])^(1-x_s),
    computed in log space. Accepts a single vector or a matrix of rows.
    """
    x = np.asarray(symptom_vector, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != world.n_symptoms:
        raise InputError(
            f"symptom vector length {xb.shape[1]} != world size {world.n_symptoms}"
        )
    log_p = np.log(world.symptom_probs)
    log_q = np.log1p(-world.symptom_probs)
    scores = np.log(world.priors) + xb @ log_p.T + (1.0 - xb) @ log_q.T
    scores -= scores.max(axis=1, keepdims=True)
    post = np.exp(scores)
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if single else post


# ---------------------------------------------------------------------------
# image augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rotate:
    degrees: int


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float


@dataclass(frozen=True)
class WhiteNoise:
    amplitude: float
    seed: int = 0


@dataclass(frozen=True)
class Brightness:
    factor: float


def _rotate(image: np.ndarray, degrees: int) -> np.ndarray:
    if degrees % 30 != 0 or not 0 <= degrees <= 330:
        raise InputError(f"rotation must be a multiple of 30 in [0, 330], got {degrees}")
    if degrees % 90 == 0:
        # lossless index permutation; positive angles rotate clockwise
        return np.ascontiguousarray(np.rot90(image, k=-(degrees // 90) % 4))
    # bilinear resample around the center with zero padding
    h, w = image.shape[:2]
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: rotate output coordinates back into the source frame
    dy, dx = rows - cy, cols - cx
    src_y = cos_t * dy - sin_t * dx + cy
    src_x = sin_t * dy + cos_t * dx + cx
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    fy = src_y - y0
    fx = src_x - x0
    out = np.zeros_like(image, dtype=np.float64)
    img = image.astype(np.float64)
    for oy, ox, weight in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + oy, x0 + ox
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        contrib = np.where(valid, weight, 0.0)
        sample = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        out += contrib[..., None] * sample if image.ndim == 3 else contrib * sample
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise InputError("blur sigma must be positive")
    radius = int(np.ceil(3 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2 * sigma**2))
    kernel /= kernel.sum()
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[..., None]
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    img = sum(kernel[i] * padded[i : i + image.shape[0]] for i in range(len(kernel)))
    padded = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    img = sum(
        kernel[i] * padded[:, i : i + image.shape[1]] for i in range(len(kernel))
    )
    if image.ndim == 2:
        img = img[..., 0]
    return np.clip(round_half_away(img), 0, 255).astype(np.uint8)


def _white_noise(image: np.ndarray, amplitude: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng((abs(seed), 0xA0) )
    noise = rng.normal(0.0, amplitude, image.shape)
    return np.clip(round_half_away(image.astype(np.float64) + noise), 0, 255).astype(
        np.uint8
    )


def _brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise InputError("brightness factor must be positive")
    out = image.astype(np.float64) * factor
    return np.clip(round_half_away(out), 0, 255).astype(np.uint8)


def augment_image(image: np.ndarray, ops) -> list[np.ndarray]:
    """Apply each op to the source image; one output per op."""
    image = np.asarray(image, dtype=np.uint8)
    results = []
    for op in ops:
        if isinstance(op, Rotate):
            results.append(_rotate(image, op.degrees))
        elif isinstance(op, GaussianBlur):
            results.append(_gaussian_blur(image, op.sigma))
        elif isinstance(op, WhiteNoise):
            results.append(_white_noise(image, op.amplitude, op.seed))
        elif isinstance(op, Brightness):
            results.append(_brightness(image, op.factor))
        else:
            raise InputError(f"unknown augmentation op {op!r}")
    return results


# ---------------------------------------------------------------------------
# synthetic skin textures (26 procedurally distinct classes)
# ---------------------------------------------------------------------------


def _class_style(class_id: int):
    rng = np.random.default_rng((class_id, 0x51C1))
    hue = class_id / SKIN_CLASSES
    base = np.array(
        [
            140 + 100 * np.sin(2 * np.pi * hue),
            140 + 100 * np.sin(2 * np.pi * hue + 2.1),
            140 + 100 * np.sin(2 * np.pi * hue + 4.2),
        ]
    )
    return {
        "base": np.clip(base, 20, 235),
        "spot_density": float(rng.uniform(0.0, 0.1)),
        "spot_radius": int(rng.integers(1, 4)),
        "stripe_freq": float(rng.uniform(0.0, 4.0)),
        "stripe_angle": float(rng.uniform(0, np.pi)),
        "stripe_gain": float(rng.uniform(0.0, 40.0)),
    }


def make_skin_image(class_id: int, seed: int, size: int = SKIN_IMAGE_SIZE) -> np.ndarray:
    """One 8-bit RGB texture sample for a synthetic skin class."""
    if not 0 <= class_id < SKIN_CLASSES:
        raise InputError(f"class_id must be in [0, {SKIN_CLASSES})")
    style = _class_style(class_id)
    rng = np.random.default_rng((abs(seed), class_id, 0xDE2))
    img = np.ones((size, size, 3)) * style["base"]
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(
        2
        * np.pi
        * style["stripe_freq"]
        / size
        * (rows * np.cos(style["stripe_angle"]) + cols * np.sin(style["stripe_angle"]))
        + phase
    )
    img += (style["stripe_gain"] * wave)[..., None]
    n_spots = rng.binomial(size * size, style["spot_density"])
    for _ in range(n_spots):
        cy, cx = rng.integers(0, size, 2)
        r = style["spot_radius"]
        shade = rng.uniform(-60, 60)
        y0, y1 = max(0, cy - r), min(size, cy + r + 1)
        x0, x1 = max(0, cx - r), min(size, cx + r + 1)
        img[y0:y1, x0:x1] += shade
    img += rng.normal(0, 8.0, img.shape)
    return np.clip(round_half_away(img), 0, 255).astype(np.uint8)


def gen_skin_dataset(
    n_per_class: int, seed: int, size: int = SKIN_IMAGE_SIZE
) -> list[LabeledSample]:
    samples = []
    for c in range(SKIN_CLASSES):
        for i in range(n_per_class):
            samples.append(
                LabeledSample(label=c, image=make_skin_image(c, seed * 100_003 + i, size))
            )
    return samples


# ---------------------------------------------------------------------------
# record files: u64 payload length | payload | u32 crc32(payload)
# ---------------------------------------------------------------------------

_MOD_SYMPTOMS = 0
_MOD_IMAGE = 1


def _encode_sample(s: LabeledSample) -> bytes:
    if s.symptoms is not None:
        arr = np.ascontiguousarray(s.symptoms, dtype="<f4")
        modality, dtype_code = _MOD_SYMPTOMS, 0
    else:
        arr = np.ascontiguousarray(s.image, dtype=np.uint8)
        modality, dtype_code = _MOD_IMAGE, 1
    head = struct.pack(
        "<BIBB", modality, s.label, dtype_code, arr.ndim
    ) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _decode_sample(payload: bytes) -> LabeledSample:
    modality, label, dtype_code, rank = struct.unpack_from("<BIBB", payload, 0)
    pos = 7
    shape = struct.unpack_from(f"<{rank}I", payload, pos)
    pos += 4 * rank
    if dtype_code == 0:
        arr = np.frombuffer(payload, dtype="<f4", offset=pos).reshape(shape).copy()
    else:
        arr = np.frombuffer(payload, dtype=np.uint8, offset=pos).reshape(shape).copy()
    if modality == _MOD_SYMPTOMS:
        return LabeledSample(label=label, symptoms=arr)
    return LabeledSample(label=label, image=arr)


def write_records(samples: list[LabeledSample], path) -> None:
    with open(path, "wb") as f:
        for s in samples:
            payload = _encode_sample(s)
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def iter_records(path, on_error: str = "raise"):
    """Stream samples; reads only as many bytes as records consumed.

    on_error: "raise" fails on the first corrupt record; "skip" yields
    (index, offset) diagnostics via DataError.report-free skipping.
    """
    if on_error not in ("raise", "skip"):
        raise InputError("on_error must be 'raise' or 'skip'")
    with open(path, "rb") as f:
        index = 0
        while True:
            offset = f.tell()
            head = f.read(8)
            if not head:
                return
            if len(head) < 8:
                raise DataError(f"record {index}: truncated length at offset {offset}")
            (length,) = struct.unpack("<Q", head)
            body = f.read(length + 4)
            if len(body) < length + 4:
                raise DataError(f"record {index}: truncated payload at offset {offset}")
            payload, (crc,) = body[:length], struct.unpack("<I", body[length:])
            if zlib.crc32(payload) & 0xFFFFFFFF != crc:
                if on_error == "raise":
                    raise DataError(
                        f"record {index}: checksum mismatch at offset {offset}"
                    )
                index += 1
                continue
            yield _decode_sample(payload)
            index += 1


def read_records(path, on_error: str = "raise") -> list[LabeledSample]:
    return list(iter_records(path, on_error=on_error))
