//! Corpus generators shared by the integration suites.
#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};

/// `per_class` solid-colour PNGs per `(class, colour)`, with a small
/// per-image brightness jitter so frames are not byte-identical.
pub fn solid_corpus(root: &Path, classes: &[(&str, [u8; 3])], per_class: usize, size: u32) {
    for (name, rgb) in classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let jitter = (i % 7) as i16 * 3 - 9;
            let px = rgb.map(|c| (c as i16 + jitter).clamp(0, 255) as u8);
            RgbImage::from_pixel(size, size, Rgb(px))
                .save(dir.join(format!("img_{i:03}.png")))
                .unwrap();
        }
    }
}

pub const RED_BLUE: [(&str, [u8; 3]); 2] = [("blue", [25, 30, 210]), ("red", [215, 25, 30])];
