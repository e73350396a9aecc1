"""Synthetic desk-scale corpora: phishing/legitimate URLs and brand pages.

Both generators are pure functions of their arguments and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import LEGITIMATE, PHISHING, GroundTruthAnnotation, ManifestRecord, UrlSample

WORDS = (
    "apple", "garden", "house", "river", "market", "studio", "coffee", "travel", "music", "photo",
    "design", "family", "school", "health", "sport", "green", "blue", "happy", "sunny", "north",
    "south", "city", "home", "book", "store", "shop", "news", "daily", "world", "cloud",
    "bakery", "florist", "julie", "maria", "david", "smith", "taylor", "wilson", "baker", "cooper",
    "yoga", "dance", "craft", "paint", "wood", "stone", "lake", "forest", "mountain", "ocean",
    "pizza", "kitchen", "recipe", "wedding", "events", "church", "club", "team", "league", "soccer",
    "tennis", "golf", "motor", "bike", "auto", "repair", "clean", "pet", "dog", "horse",
    "farm", "fresh", "organic", "local", "village", "county", "state", "museum", "gallery", "theater",
    "cinema", "movie", "games", "puzzle", "learn", "tutor", "math", "science", "history", "poetry",
    "writer", "blog", "journal", "diary", "story", "voice", "wireless", "mobile", "phone", "office",
    "legal", "dental", "clinic", "care", "senior", "kids", "baby", "toys", "fashion", "beauty",
    "salon", "hair", "nails", "jewel", "silver", "golden", "bright", "smart", "simple", "modern",
    "about", "contact", "products", "services", "gallery", "pricing", "blog", "team", "careers", "help",
    "support", "login", "account", "profile", "settings", "search", "index", "page", "menu", "order",
)

CLOUD_SUFFIXES = (
    "weebly.com", "typeform.com", "wixsite.com", "godaddysites.com", "webflow.io",
    "azurewebsites.net", "duckdns.org", "linktr.ee", "000webhostapp.com", "firebaseapp.com",
)
TLDS = ("com", "org", "net", "co.uk", "io", "de")

# consonant-heavy: two thirds consonants, the rest vowels and digits
_RANDOM_ALPHABET = "bcdfghjklmnpqrstvwxz" * 2 + "aeiou" * 2 + "0123456789"
_ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"


def _rand_string(rng: np.random.Generator, n: int, alphabet: str) -> str:
    idx = rng.integers(0, len(alphabet), size=n)
    return "".join(alphabet[i] for i in idx)


def random_subdomain(rng: np.random.Generator, length: int | None = None) -> str:
    n = int(rng.integers(8, 15)) if length is None else length
    return _rand_string(rng, n, _RANDOM_ALPHABET)


def word_subdomain(rng: np.random.Generator) -> str:
    k = int(rng.integers(1, 4))
    return "".join(WORDS[i] for i in rng.integers(0, len(WORDS), size=k))


def _legit_url(rng: np.random.Generator) -> str:
    style = rng.random()
    if style < 0.45:
        host = f"www.{word_subdomain(rng)}.{TLDS[rng.integers(len(TLDS))]}"
    elif style < 0.85:
        host = f"{word_subdomain(rng)}.{CLOUD_SUFFIXES[rng.integers(len(CLOUD_SUFFIXES))]}"
    else:
        return f"https://sites.google.com/view/{word_subdomain(rng)}/home"
    depth = int(rng.integers(0, 3))
    path = "".join(
        "/" + ("-".join(WORDS[i] for i in rng.integers(0, len(WORDS), size=int(rng.integers(1, 3)))))
        for _ in range(depth)
    )
    return f"https://{host}{path}"


def _phish_url(rng: np.random.Generator) -> str:
    host = f"{random_subdomain(rng)}.{CLOUD_SUFFIXES[rng.integers(len(CLOUD_SUFFIXES))]}"
    depth = int(rng.integers(0, 3))
    segs = []
    for _ in range(depth):
        if rng.random() < 0.5:
            segs.append(WORDS[rng.integers(len(WORDS))])
        else:
            segs.append(_rand_string(rng, int(rng.integers(5, 11)), _ALNUM))
    path = "".join("/" + s for s in segs)
    return f"https://{host}{path}"


def synth_urls(n_per_class: int, seed: int) -> list[UrlSample]:
    """Balanced URL corpus, phishing and legitimate interleaved.

    Legitimate URLs are built from dictionary words, including dictionary
    subdomains on the same cloud suffixes the phishing class uses, so the
    class signal is subdomain randomness rather than the hosting service.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    out: list[UrlSample] = []
    for _ in range(n_per_class):
        out.append(UrlSample(_phish_url(rng), PHISHING, "synth"))
        out.append(UrlSample(_legit_url(rng), LEGITIMATE, "synth"))
    return out


def paired_probes(n: int, seed: int) -> list[tuple[str, str]]:
    """(random-subdomain URL, dictionary-subdomain URL) pairs of equal length."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        word = word_subdomain(rng)
        if len(word) < 8:
            continue
        suffix = CLOUD_SUFFIXES[rng.integers(len(CLOUD_SUFFIXES))]
        rand = random_subdomain(rng, len(word))
        pairs.append((f"https://{rand}.{suffix}", f"https://{word}.{suffix}"))
    return pairs


# ---------------------------------------------------------------------------
# pages

GLYPHS = ("disk", "square", "triangle", "ring", "cross", "diamond", "bars", "tee", "chevron", "frame")

_PALETTE = np.array(
    [
        [0.86, 0.16, 0.12],
        [0.10, 0.35, 0.85],
        [1.00, 0.80, 0.00],
        [0.12, 0.60, 0.25],
        [0.55, 0.20, 0.70],
        [0.95, 0.50, 0.10],
        [0.05, 0.65, 0.70],
        [0.35, 0.25, 0.15],
        [0.90, 0.35, 0.60],
        [0.20, 0.20, 0.25],
    ]
)

DEFAULT_BRANDS = ("google", "bt", "dhl", "facebook", "paypal", "chase", "esso", "amazon", "apple", "microsoft")


@dataclass(frozen=True)
class PageTemplate:
    background: tuple
    header: tuple
    header_h: int
    button: tuple
    button_rect: tuple  # y, x, h, w as fractions of the page
    glyph: str
    logo_color: tuple
    logo_wh: tuple  # pixels at 64x64
    logo_xy: tuple  # top-left pixels at 64x64


def brand_template(index: int) -> PageTemplate:
    """Layout for the ``index``-th brand; identical for a given index across calls."""
    k = len(_PALETTE)
    bg_light = 0.78 + 0.2 * ((index * 7) % 5) / 4
    background = tuple(np.clip(bg_light - 0.12 * _PALETTE[(index + 5) % k] * ((index % 3) / 2), 0, 1))
    header = tuple(_PALETTE[(index * 3 + 1) % k])
    button = tuple(_PALETTE[(index * 7 + 2) % k])
    logo_color = tuple(_PALETTE[index % k])
    glyph = GLYPHS[index % len(GLYPHS)]
    wide = glyph in ("bars", "frame") or index % 4 == 3
    logo_wh = (24, 12) if wide else (14 + 2 * (index % 3), 14 + 2 * (index % 3))
    positions = [(6, 16), (40, 18), (24, 26), (8, 36), (36, 40)]
    logo_xy = positions[index % len(positions)]
    header_h = 5 + 3 * (index % 3)
    button_rect = (0.70 + 0.05 * (index % 3), 0.15 + 0.2 * ((index // 2) % 3), 0.10, 0.35)
    return PageTemplate(background, header, header_h, button, button_rect, glyph, logo_color, logo_wh, logo_xy)


def _glyph_mask(kind: str, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    ny, nx = (yy - cy) / (h / 2), (xx - cx) / (w / 2)
    if kind == "disk":
        return nx**2 + ny**2 <= 1.0
    if kind == "square":
        return np.ones((h, w), bool)
    if kind == "triangle":
        return (ny >= -1) & (np.abs(nx) <= (ny + 1) / 2)
    if kind == "ring":
        r = nx**2 + ny**2
        return (r <= 1.0) & (r >= 0.35)
    if kind == "cross":
        return (np.abs(nx) <= 0.3) | (np.abs(ny) <= 0.3)
    if kind == "diamond":
        return np.abs(nx) + np.abs(ny) <= 1.0
    if kind == "bars":
        return (np.abs(ny) >= 0.55) | (np.abs(ny) <= 0.15)
    if kind == "tee":
        return (ny <= -0.4) | (np.abs(nx) <= 0.25)
    if kind == "chevron":
        return np.abs(ny - (np.abs(nx) - 0.5)) <= 0.45
    if kind == "frame":
        return (np.abs(nx) >= 0.7) | (np.abs(ny) >= 0.6)
    raise ValueError(f"unknown glyph {kind!r}")


@dataclass
class SynthPages:
    images: np.ndarray  # (n, size, size, 3) float64 in [0, 1], multiples of 1/255
    page_ids: list[str]
    brands: list[str]
    annotations: list[GroundTruthAnnotation]

    def __len__(self) -> int:
        return len(self.page_ids)

    def subset(self, indices: Sequence[int]) -> "SynthPages":
        idx = list(indices)
        return SynthPages(
            self.images[idx],
            [self.page_ids[i] for i in idx],
            [self.brands[i] for i in idx],
            [self.annotations[i] for i in idx],
        )


def render_page(template: PageTemplate, rng: np.random.Generator, size: int = 64, logo_jitter: int = 6):
    """Draw one page; returns (image, logo corner box in pixels)."""
    s = size / 64.0
    hue = rng.uniform(-0.04, 0.04, size=3)
    img = np.empty((size, size, 3))
    img[:] = np.clip(np.array(template.background) + hue, 0, 1)
    shift_y, shift_x = (int(v) for v in rng.integers(-2, 3, size=2))

    hh = max(1, int(round(template.header_h * s)) + shift_y)
    img[:hh] = np.clip(np.array(template.header) + hue, 0, 1)

    # text lines in the body: the noisy part of each page
    n_lines = int(rng.integers(3, 7))
    for _ in range(n_lines):
        y = int(rng.integers(int(0.45 * size), int(0.68 * size)))
        x0 = int(rng.integers(2, size // 3))
        x1 = int(rng.integers(x0 + 4, size - 2))
        shade = rng.uniform(0.2, 0.5)
        img[y, x0:x1] = shade

    by, bx, bh, bw = template.button_rect
    y0 = int(by * size) + shift_y
    x0 = int(bx * size) + shift_x
    img[max(y0, 0):max(y0, 0) + max(1, int(bh * size)), max(x0, 0):max(x0, 0) + int(bw * size)] = np.clip(
        np.array(template.button) + hue, 0, 1
    )

    lw = max(2, int(round(template.logo_wh[0] * s)))
    lh = max(2, int(round(template.logo_wh[1] * s)))
    jx, jy = (int(v) for v in rng.integers(-logo_jitter, logo_jitter + 1, size=2))
    lx = int(np.clip(int(round(template.logo_xy[0] * s)) + jx, 0, size - lw))
    ly = int(np.clip(int(round(template.logo_xy[1] * s)) + jy, hh + 1 if hh + 1 + lh <= size else 0, size - lh))
    mask = _glyph_mask(template.glyph, lh, lw)
    patch = img[ly:ly + lh, lx:lx + lw]
    patch[mask] = template.logo_color
    img = np.round(np.clip(img, 0, 1) * 255) / 255
    return img, (lx, ly, lx + lw, ly + lh)


def synth_pages(
    brands: Sequence[str],
    pages_per_brand: int,
    seed: int,
    size: int = 64,
    logo_jitter: int = 6,
) -> SynthPages:
    """Screenshots and logo annotations for ``pages_per_brand`` pages per brand.

    The i-th brand always gets template ``brand_template(i)``, so extending
    the brand list keeps earlier brands' look unchanged.
    """
    if len(brands) < 2:
        raise ValueError("need at least 2 brands")
    if len(set(brands)) != len(brands):
        raise ValueError("brand names must be unique")
    rng = np.random.default_rng(seed)
    images, ids, labels, anns = [], [], [], []
    for bi, brand in enumerate(brands):
        tmpl = brand_template(bi)
        for p in range(pages_per_brand):
            img, (x0, y0, x1, y1) = render_page(tmpl, rng, size, logo_jitter)
            pid = f"{brand}-{p:03d}"
            images.append(img)
            ids.append(pid)
            labels.append(brand)
            anns.append(GroundTruthAnnotation(pid, brand, x0, y0, x1, y1, size, size))
    return SynthPages(np.stack(images), ids, labels, anns)


def write_pages(pages: SynthPages, directory, label: str = LEGITIMATE, header: str | None = None) -> list[ManifestRecord]:
    """Write PNG screenshots, ``manifest.csv`` and ``annotations.csv`` into ``directory``."""
    from .datasets import save_annotations, save_manifest
    from .images import save_image

    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for img, pid, brand in zip(pages.images, pages.page_ids, pages.brands):
        path = d / "images" / f"{pid}.png"
        save_image(img, path)
        records.append(ManifestRecord(pid, "screenshot", str(path), label, brand, "synth"))
    save_manifest(records, d / "manifest.csv", relative_to=d, header=header)
    save_annotations(pages.annotations, d / "annotations.csv", header=header)
    return records
