/**
 * Pure geometry for the point marker and the circle-lens magnifier.
 *
 * Everything here maps normalized point coordinates (x, y in [0, 1],
 * pixel-center convention) into CSS pixel offsets relative to the rendered
 * image box.  Keeping this free of DOM access makes the anchoring invariant
 * testable: recomputing after any resize or zoom must land the marker on the
 * same normalized point, and scaling the box by 2x must scale the offsets by
 * exactly 2x (so the only error left is sub-pixel rounding in the renderer).
 */

/** Rendered size of the image element in CSS pixels. */
export interface Box {
  width: number;
  height: number;
}

export interface Placement {
  left: number;
  top: number;
}

/**
 * Marker centre offset from the image box origin.
 *
 * Exact linear map; no rounding.  Rounding to device pixels is the
 * renderer's job and costs at most 0.5 px, which keeps the marker within
 * 1 px of the true point even at 2x zoom.
 */
export function markerPosition(x: number, y: number, box: Box): Placement {
  return { left: x * box.width, top: y * box.height };
}

/** Inverse of markerPosition; used to verify anchoring after a resize. */
export function normalizedFromOffset(p: Placement, box: Box): {
  x: number;
  y: number;
} {
  return { x: p.left / box.width, y: p.top / box.height };
}

export interface LensStyle {
  /** Top-left corner of the lens element, relative to the image box. */
  left: number;
  top: number;
  diameter: number;
  /** background-size of the magnified image, CSS px. */
  bgWidth: number;
  bgHeight: number;
  /** background-position so the point sits at the lens centre. */
  bgLeft: number;
  bgTop: number;
}

/**
 * Circle-lens placement: a round window of `diameter` CSS px centred on the
 * point, showing the image magnified by `magnification`.
 *
 * The background is the full image scaled up; its offset is chosen so the
 * annotated point maps to the exact centre of the lens.  Solving
 * bgLeft + x * bgWidth = diameter / 2 gives the offsets below.
 */
export function lensStyle(
  x: number,
  y: number,
  box: Box,
  diameter: number,
  magnification: number,
): LensStyle {
  const bgWidth = box.width * magnification;
  const bgHeight = box.height * magnification;
  const marker = markerPosition(x, y, box);
  return {
    left: marker.left - diameter / 2,
    top: marker.top - diameter / 2,
    diameter,
    bgWidth,
    bgHeight,
    bgLeft: diameter / 2 - x * bgWidth,
    bgTop: diameter / 2 - y * bgHeight,
  };
}

/**
 * Displayed box of an image inside its element under object-fit: contain
 * semantics.  Used when the element aspect ratio differs from the bitmap's.
 */
export function containedBox(
  naturalWidth: number,
  naturalHeight: number,
  elementWidth: number,
  elementHeight: number,
): Box & Placement {
  const scale = Math.min(
    elementWidth / naturalWidth,
    elementHeight / naturalHeight,
  );
  const width = naturalWidth * scale;
  const height = naturalHeight * scale;
  return {
    width,
    height,
    left: (elementWidth - width) / 2,
    top: (elementHeight - height) / 2,
  };
}
