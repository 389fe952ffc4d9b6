//! Procedural scene images: one labeled object tile on a plain background.
//!
//! Tiles are pixel-identical wherever they appear and always sit on
//! multiples of 1/8 of the scene, so cropping a scene to the tile's ratio box
//! recovers the tile exactly and the hash embedder maps every view of an
//! object to the same vector.

use image::{DynamicImage, Rgb, RgbImage};

use crate::store::BoundingBox;

pub const SCENE_SIZE: u32 = 128;
pub const TILE_SIZE: u32 = 64;
const STEP: u32 = 16;

/// Tile pattern: the object color with its catalog index written as eight
/// black/white cells along the top edge.
pub fn tile(index: u8, rgb: [u8; 3]) -> RgbImage {
    let cell = TILE_SIZE / 8;
    RgbImage::from_fn(TILE_SIZE, TILE_SIZE, |x, y| {
        if y < cell {
            let bit = (index >> (x / cell)) & 1;
            if bit == 1 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) }
        } else {
            Rgb(rgb)
        }
    })
}

/// Number of distinct tile positions along each axis.
pub fn positions() -> u32 {
    (SCENE_SIZE - TILE_SIZE) / STEP + 1
}

/// Place the tile at grid position (`gx`, `gy`) on a background of gray
/// level `bg`. `nonce` is stamped into four background pixels so that
/// otherwise identical scenes get distinct content addresses.
/// Returns the scene and the tile's ratio box.
pub fn scene(index: u8, rgb: [u8; 3], gx: u32, gy: u32, bg: u8, nonce: u32) -> (DynamicImage, BoundingBox) {
    let (gx, gy) = (gx % positions(), gy % positions());
    let (ox, oy) = (gx * STEP, gy * STEP);
    let t = tile(index, rgb);
    let mut img = RgbImage::from_pixel(SCENE_SIZE, SCENE_SIZE, Rgb([bg, bg, bg]));
    image::imageops::replace(&mut img, &t, ox as i64, oy as i64);
    // the tile never spans the full height, so one of the edge rows is free
    let row = if oy + TILE_SIZE >= SCENE_SIZE { 0 } else { SCENE_SIZE - 1 };
    for (i, b) in nonce.to_le_bytes().into_iter().enumerate() {
        img.put_pixel(i as u32, row, Rgb([b, b, b]));
    }
    let s = SCENE_SIZE as f64;
    let bbox = BoundingBox {
        x0: ox as f64 / s,
        y0: oy as f64 / s,
        x1: (ox + TILE_SIZE) as f64 / s,
        y1: (oy + TILE_SIZE) as f64 / s,
    };
    (DynamicImage::ImageRgb8(img), bbox)
}
