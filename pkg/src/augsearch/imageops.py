"""Apply decoded policies to RGB images with seeded stochastic semantics.

Every operation fires with its probability and acts at its decoded physical
magnitude. The draw order is frozen for reproducibility: within a
sub-policy, the first operation's firing draw comes first, then any internal
draws it needs (cutout center, pairing partner), then the second
operation's, all from one generator derived from the apply seed. The same
(image, sub-policy, seed) therefore always yields the same bytes.

Geometric transforms resample bilinearly and fill exposed area with mid-gray
(128, 128, 128). All operations preserve the input dimensions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageEnhance, ImageOps

from .policy import MagnitudeRangeTable, OperationSpec, Policy, SubPolicy, default_ranges

FILL_COLOR = (128, 128, 128)

RESAMPLE = Image.Resampling.BILINEAR


class UnsupportedOperationError(RuntimeError):
    pass


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _affine(img: Image.Image, coeffs: tuple[float, ...]) -> Image.Image:
    return img.transform(
        img.size, Image.Transform.AFFINE, coeffs,
        resample=RESAMPLE, fillcolor=FILL_COLOR,
    )


def _shear_x(img, m):
    return _affine(img, (1, m, 0, 0, 1, 0))


def _shear_y(img, m):
    return _affine(img, (1, 0, 0, m, 1, 0))


def _translate_x(img, frac):
    return _affine(img, (1, 0, frac * img.size[0], 0, 1, 0))


def _translate_y(img, frac):
    return _affine(img, (1, 0, 0, 0, 1, frac * img.size[1]))


def _rotate(img, degrees):
    return img.rotate(degrees, resample=RESAMPLE, fillcolor=FILL_COLOR)


def _posterize(img, bits):
    kept = int(np.clip(round(bits), 1, 8))
    return ImageOps.posterize(img, kept)


def _solarize(img, threshold):
    return ImageOps.solarize(img, threshold)


def _cutout(img, frac, rng):
    # Square patch, side relative to the shorter image side, random center,
    # clipped at the borders, filled with the standard gray.
    side = int(round(frac * min(img.size)))
    if side <= 0:
        return img
    w, h = img.size
    cx = int(rng.integers(0, w))
    cy = int(rng.integers(0, h))
    x0, y0 = max(0, cx - side // 2), max(0, cy - side // 2)
    x1, y1 = min(w, x0 + side), min(h, y0 + side)
    out = img.copy()
    ImageDraw.Draw(out).rectangle([x0, y0, x1 - 1, y1 - 1], fill=FILL_COLOR)
    return out


def _sample_pairing(img, weight, rng, pair_source):
    if not pair_source:
        raise UnsupportedOperationError(
            "SamplePairing needs a configured pair source image set"
        )
    other = pair_source[int(rng.integers(0, len(pair_source)))]
    if other.size != img.size:
        other = other.resize(img.size, RESAMPLE)
    return Image.blend(img, other.convert("RGB"), weight)


def _apply_kind(img: Image.Image, name: str, magnitude: float,
                rng: np.random.Generator,
                pair_source: Sequence[Image.Image] | None) -> Image.Image:
    if name == "ShearX":
        return _shear_x(img, magnitude)
    if name == "ShearY":
        return _shear_y(img, magnitude)
    if name == "TranslateX":
        return _translate_x(img, magnitude)
    if name == "TranslateY":
        return _translate_y(img, magnitude)
    if name == "Rotate":
        return _rotate(img, magnitude)
    if name == "AutoContrast":
        return ImageOps.autocontrast(img)
    if name == "Invert":
        return ImageOps.invert(img)
    if name == "Equalize":
        return ImageOps.equalize(img)
    if name == "Solarize":
        return _solarize(img, magnitude)
    if name == "Posterize":
        return _posterize(img, magnitude)
    if name == "Contrast":
        return ImageEnhance.Contrast(img).enhance(magnitude)
    if name == "Color":
        return ImageEnhance.Color(img).enhance(magnitude)
    if name == "Brightness":
        return ImageEnhance.Brightness(img).enhance(magnitude)
    if name == "Sharpness":
        return ImageEnhance.Sharpness(img).enhance(magnitude)
    if name == "Cutout":
        return _cutout(img, magnitude, rng)
    if name == "SamplePairing":
        return _sample_pairing(img, magnitude, rng, pair_source)
    raise UnsupportedOperationError(f"unknown operation kind {name!r}")


def _apply_op_with_rng(img, op: OperationSpec, rng, ranges,
                       pair_source) -> Image.Image:
    fired = rng.random() < op.probability
    if not fired:
        return img
    name = ranges.name_of(op.kind)
    return _apply_kind(img, name, op.magnitude, rng, pair_source)


def apply_operation(img: Image.Image, op: OperationSpec, seed: int,
                    ranges: MagnitudeRangeTable | None = None,
                    pair_source: Sequence[Image.Image] | None = None) -> Image.Image:
    """Apply one operation with its firing probability; seeded, deterministic."""
    ranges = ranges or default_ranges()
    _check_magnitude(op, ranges)
    return _apply_op_with_rng(img.convert("RGB"), op, _rng(seed), ranges, pair_source)


def _check_magnitude(op: OperationSpec, ranges: MagnitudeRangeTable) -> None:
    rng = ranges[op.kind]
    if not (0.0 <= op.probability <= 1.0):
        raise ValueError(f"probability {op.probability} outside [0, 1]")
    if not rng.magnitude_free and not (rng.min <= op.magnitude <= rng.max):
        raise ValueError(
            f"{rng.name}: magnitude {op.magnitude} outside [{rng.min}, {rng.max}]"
        )


def apply_subpolicy(img: Image.Image, sp: SubPolicy, seed: int,
                    ranges: MagnitudeRangeTable | None = None,
                    pair_source: Sequence[Image.Image] | None = None) -> Image.Image:
    """Apply both operations in order; one seed stream governs both draws."""
    ranges = ranges or default_ranges()
    for op in sp.operations:
        _check_magnitude(op, ranges)
    rng = _rng(seed)
    out = img.convert("RGB")
    for op in sp.operations:
        out = _apply_op_with_rng(out, op, rng, ranges, pair_source)
    return out


def _apply_policy_once(img, policy: Policy, rng, ranges, pair_source):
    index = int(rng.integers(0, len(policy.sub_policies)))
    out = img
    for op in policy.sub_policies[index].operations:
        out = _apply_op_with_rng(out, op, rng, ranges, pair_source)
    return out, index


def apply_policy_minibatch_style(img: Image.Image, policy: Policy, seed: int,
                                 ranges: MagnitudeRangeTable | None = None,
                                 pair_source: Sequence[Image.Image] | None = None,
                                 ) -> Image.Image:
    """Pick one sub-policy uniformly at random (seeded) and apply it.

    This is how a policy is used in training: every image in every minibatch
    gets an independently drawn sub-policy.
    """
    ranges = ranges or default_ranges()
    if len(policy.sub_policies) == 0:
        raise ValueError("policy has no sub-policies")
    rng = _rng(seed)
    out, _ = _apply_policy_once(img.convert("RGB"), policy, rng, ranges, pair_source)
    return out


def cell_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


LABEL_STRIP = 12


def sheet_cell_box(index: int, cols: int, img_size: tuple[int, int],
                   pad: int = 2) -> tuple[int, int, int, int]:
    """Pixel box of cell ``index``'s image area inside a contact sheet."""
    w, h = img_size
    r, c = divmod(index, cols)
    x = pad + c * (w + pad)
    y = pad + r * (h + LABEL_STRIP + pad) + LABEL_STRIP
    return (x, y, x + w, y + h)


def render_contact_sheet(img: Image.Image, policy: Policy, rows: int, cols: int,
                         base_seed: int,
                         ranges: MagnitudeRangeTable | None = None,
                         pair_source: Sequence[Image.Image] | None = None,
                         pad: int = 2) -> Image.Image:
    """Grid of independently seeded applications of the policy to one image.

    Each cell gets a strip above it naming the sub-policy index it drew, so
    the stochasticity of policy application is visible at a glance. The strip
    is outside the image area: cell pixels are exactly the augmented output.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    ranges = ranges or default_ranges()
    base = img.convert("RGB")
    w, h = base.size
    sheet = Image.new(
        "RGB",
        (cols * (w + pad) + pad, rows * (h + LABEL_STRIP + pad) + pad),
        FILL_COLOR,
    )
    for i in range(rows * cols):
        rng = _rng(cell_seed(base_seed, i))
        cell, chosen = _apply_policy_once(base, policy, rng, ranges, pair_source)
        x, y, _, _ = sheet_cell_box(i, cols, (w, h), pad)
        sheet.paste(cell, (x, y))
        # Label drawn on its own strip so glyphs can never bleed into the cell.
        strip = Image.new("RGB", (w, LABEL_STRIP), FILL_COLOR)
        ImageDraw.Draw(strip).text((2, -2), f"sp{chosen}", fill=(255, 255, 0))
        sheet.paste(strip, (x, y - LABEL_STRIP))
    return sheet


def cutout_stage(img: Image.Image, frac: float, seed: int) -> Image.Image:
    """Standalone cutout for pipelines that add it after the policy stage."""
    return _cutout(img.convert("RGB"), frac, _rng(seed))


def augment_pipeline(img: Image.Image, policy: Policy, seed: int,
                     baseline=None, cutout_frac: float | None = None,
                     ranges: MagnitudeRangeTable | None = None) -> Image.Image:
    """Baseline hook, then the policy, then optional cutout.

    ``baseline`` is any callable Image -> Image supplied by the caller;
    dataset-specific baseline augmentation is deliberately not shipped here.
    """
    out = img.convert("RGB")
    if baseline is not None:
        out = baseline(out)
    out = apply_policy_minibatch_style(out, policy, seed, ranges)
    if cutout_frac is not None:
        out = cutout_stage(out, cutout_frac, cell_seed(seed, 1 << 20))
    return out
