"""Canonical dataset schema: spans, boxes, annotations, records, split config.

All invariants are enforced at construction so downstream code can assume
well-formed inputs. Token indices refer to whitespace tokens of the raw text
(end-exclusive); boxes are (x, y, w, h) in absolute pixels of the original
image, top-left origin.
"""

from __future__ import annotations

from dataclasses import dataclass


class ValidationError(ValueError):
    """A record, annotation, or file violates the dataset schema."""


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization; span indices are defined over these tokens."""
    return text.split()


@dataclass(frozen=True)
class TokenSpan:
    """Half-open token interval [start, end) over whitespace tokens."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValidationError(f"invalid span [{self.start},{self.end}): need 0 <= start < end")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "TokenSpan") -> bool:
        return self.start < other.end and other.start < self.end

    def indices(self) -> range:
        return range(self.start, self.end)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box: top-left corner (x, y), width w, height h."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"invalid box {self.as_tuple()}: need w > 0 and h > 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(self.x * sx, self.y * sy, self.w * sx, self.h * sy)

    def inside(self, width: float, height: float) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class AnnotationSet:
    """One annotator's clue markings for a sample: token spans + image boxes.

    Spans must be pairwise non-overlapping. A non-empty span list implies at
    least one box (an annotator who marked text also marked the image clue).
    """

    annotator_id: str
    spans: tuple[TokenSpan, ...] = ()
    boxes: tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ordered = sorted(self.spans, key=lambda s: s.start)
        for a, b in zip(ordered, ordered[1:]):
            if a.overlaps(b):
                raise ValidationError(
                    f"annotator {self.annotator_id!r}: overlapping spans "
                    f"[{a.start},{a.end}) and [{b.start},{b.end})"
                )
        if self.spans and not self.boxes:
            raise ValidationError(
                f"annotator {self.annotator_id!r}: spans present but no boxes"
            )

    @property
    def is_empty(self) -> bool:
        return not self.spans and not self.boxes

    def token_indices(self) -> set[int]:
        out: set[int] = set()
        for s in self.spans:
            out.update(s.indices())
        return out


@dataclass(frozen=True)
class DatasetRecord:
    """One news item: document text, image reference, label, optional gold clues."""

    id: str
    topic: str
    text: str
    image_path: str
    sarcastic: bool
    gold: AnnotationSet | None = None

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise ValidationError(f"record {self.id!r}: document has no tokens")
        has_gold = self.gold is not None and not self.gold.is_empty
        if self.sarcastic != has_gold:
            raise ValidationError(
                f"record {self.id!r}: sarcastic={self.sarcastic} but gold is "
                f"{'present' if has_gold else 'absent or empty'}"
            )
        if self.gold is not None:
            for s in self.gold.spans:
                if s.end > n:
                    raise ValidationError(
                        f"record {self.id!r}: span [{s.start},{s.end}) exceeds {n} tokens"
                    )

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def gold_token_indices(self) -> set[int]:
        return self.gold.token_indices() if self.gold is not None else set()


@dataclass(frozen=True)
class SplitConfig:
    """Train/val/test fractions plus the shuffle seed."""

    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if len(self.ratios) != 3:
            raise ValidationError("ratios must have exactly three entries")
        if any(r <= 0 for r in self.ratios):
            raise ValidationError(f"ratios must all be > 0, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"ratios must sum to 1.0, got {sum(self.ratios)!r}")
