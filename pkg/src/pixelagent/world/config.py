"""World and noise configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


class ConfigurationError(ValueError):
    """Raised when a config fails validation."""


@dataclass(frozen=True)
class NoiseConfig:
    """Per-tool corruption rates applied at execution time.

    All rates live in [0, 1].  ``p_ocr`` is a per-character substitution
    probability; the jitter rates are per-call probabilities of shifting
    the returned geometry by one cell or frame.
    """

    p_ocr: float = 0.0
    seg_jitter: float = 0.0
    trk_jitter: float = 0.0
    temp_jitter: float = 0.0
    prop_flip: float = 0.0

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"noise rate {f.name}={v} outside [0, 1]")


@dataclass(frozen=True)
class WorldConfig:
    """Geometry and content knobs for synthetic clips.

    Cell codes are laid out as contiguous bands: background texture codes,
    then one body code per object class, then one code per glyph.  The
    shift knobs produce a distribution-shifted split (rotated background
    band, rescaled track velocities) without touching ground truth.
    """

    height: int = 32
    width: int = 32
    frames: int = 8
    n_objects: int = 4
    n_classes: int = 4
    alphabet: int = 16
    text_len: int = 3
    n_events: int = 2
    velocity_cap: int = 2
    region_bins: int = 4          # bins per axis; region args index a region_bins^2 grid
    answer_classes: int = 16
    background_codes: int = 4
    brightness_shift: int = 0     # rotates background codes within their band
    velocity_shift: float = 1.0   # scales object velocities, still capped
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def validate(self) -> None:
        if self.height * self.width == 0:
            raise ConfigurationError("grid must be nonempty (height*width > 0)")
        if self.frames < 1:
            raise ConfigurationError("frames must be >= 1")
        if self.n_objects < 0 or self.n_objects > self.region_bins**2:
            raise ConfigurationError(
                f"n_objects={self.n_objects} must fit distinct region bins "
                f"({self.region_bins ** 2})"
            )
        if self.n_classes < 1 or self.alphabet < 2:
            raise ConfigurationError("need n_classes >= 1 and alphabet >= 2")
        if self.height % self.region_bins or self.width % self.region_bins:
            raise ConfigurationError("height/width must be divisible by region_bins")
        if self.answer_classes < max(self.alphabet, self.frames, self.n_objects + 1):
            raise ConfigurationError(
                "answer_classes must cover glyphs, frame bins and counts"
            )
        if self.velocity_cap < 0:
            raise ConfigurationError("velocity_cap must be >= 0")
        self.noise.validate()

    # -- derived quantities used across modules ------------------------------

    @property
    def n_region_bins(self) -> int:
        return self.region_bins**2

    @property
    def code_count(self) -> int:
        """Total number of distinct cell codes."""
        return self.background_codes + self.n_classes + self.alphabet

    @property
    def body_code_base(self) -> int:
        return self.background_codes

    @property
    def glyph_code_base(self) -> int:
        return self.background_codes + self.n_classes

    def bin_rect(self, b: int) -> tuple[int, int, int, int]:
        """(x, y, w, h) of region bin ``b`` in absolute cells."""
        if not 0 <= b < self.n_region_bins:
            raise ConfigurationError(f"region bin {b} out of range")
        bw = self.width // self.region_bins
        bh = self.height // self.region_bins
        bx = (b % self.region_bins) * bw
        by = (b // self.region_bins) * bh
        return (bx, by, bw, bh)

    def bin_of_point(self, x: float, y: float) -> int:
        bw = self.width // self.region_bins
        bh = self.height // self.region_bins
        cx = min(int(x) // bw, self.region_bins - 1)
        cy = min(int(y) // bh, self.region_bins - 1)
        return cy * self.region_bins + cx


def dataclass_from_dict(cls, data: dict, *, path: str = ""):
    """Build a (possibly nested) dataclass from a plain dict.

    Unknown keys are hard errors so hyperparameter typos cannot pass
    silently.
    """
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {path + key!r} for {cls.__name__}")
        f = known[key]
        if isinstance(value, dict) and hasattr(f.type, "__dataclass_fields__"):
            value = dataclass_from_dict(f.type, value, path=path + key + ".")
        elif isinstance(value, dict) and f.name == "noise":
            value = dataclass_from_dict(NoiseConfig, value, path=path + key + ".")
        kwargs[key] = value
    return cls(**kwargs)
