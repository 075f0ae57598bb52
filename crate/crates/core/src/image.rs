//! Frames, masks and their on-disk encodings.
//!
//! Frames are 8-bit RGB, read from PNG or binary PPM (P6). Masks are read
//! from PNG or PGM and any non-zero sample counts as bleeding. Masks are
//! written with 0 for background and 255 for bleeding. All writes go to a
//! temporary file in the target directory and are renamed into place, so a
//! failed run never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ::image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use ::image::{DynamicImage, GrayImage, ImageFormat, RgbImage as RgbBuffer};

use crate::error::{ensure, Error, Result};

/// Smallest admissible frame side: one full 5×5 patch.
pub const MIN_SIDE: usize = 5;

/// Row-major 8-bit RGB frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(
            width >= MIN_SIDE && height >= MIN_SIDE,
            InvalidArgument,
            "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
        );
        ensure!(
            data.len() == width * height * 3,
            DimensionMismatch,
            "expected {} bytes for {width}x{height} RGB, got {}",
            width * height * 3,
            data.len()
        );
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A frame filled with a single color.
    pub fn uniform(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl ExactSizeIterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = read_dynamic(path)?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    /// Writes PNG or binary PPM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = RgbBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        encode_atomic(path, &DynamicImage::ImageRgb8(buf))
    }
}

/// Row-major binary label plane; 1 marks bleeding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        ensure!(
            labels.len() == width * height,
            DimensionMismatch,
            "expected {} labels for {width}x{height}, got {}",
            width * height,
            labels.len()
        );
        ensure!(
            labels.iter().all(|&l| l <= 1),
            InvalidData,
            "mask labels must be 0 or 1"
        );
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    /// Thresholds raw samples: anything above zero is bleeding.
    pub fn from_samples(width: usize, height: usize, samples: &[u8]) -> Result<Self> {
        let labels = samples.iter().map(|&v| u8::from(v > 0)).collect();
        Self::new(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn same_shape(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = read_dynamic(path)?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::from_samples(w as usize, h as usize, gray.as_raw())
    }

    /// Writes PNG or PGM (0 / 255) depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let samples = self.labels.iter().map(|&l| l * 255).collect();
        let buf = GrayImage::from_raw(self.width as u32, self.height as u32, samples)
            .expect("buffer length checked at construction");
        encode_atomic(path, &DynamicImage::ImageLuma8(buf))
    }
}

/// Tints predicted bleeding pixels onto the frame for visual inspection.
pub fn overlay(image: &RgbImage, mask: &LabelMask) -> Result<RgbImage> {
    ensure!(
        mask.same_shape(image.width(), image.height()),
        DimensionMismatch,
        "mask {}x{} does not match image {}x{}",
        mask.width(),
        mask.height(),
        image.width(),
        image.height()
    );
    let mut data = image.data().to_vec();
    for (px, &label) in data.chunks_exact_mut(3).zip(mask.labels()) {
        if label == 1 {
            // blend halfway towards pure green, which never occurs in the tissue
            px[0] /= 2;
            px[1] = px[1] / 2 + 128;
            px[2] /= 2;
        }
    }
    RgbImage::new(image.width(), image.height(), data)
}

fn read_dynamic(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = ::image::guess_format(&bytes)
        .or_else(|_| ImageFormat::from_path(path))
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
    ::image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn encode_atomic(path: &Path, img: &DynamicImage) -> Result<()> {
    let format = ImageFormat::from_path(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    ensure!(
        matches!(format, ImageFormat::Png | ImageFormat::Pnm),
        InvalidArgument,
        "unsupported output format for {}",
        path.display()
    );
    let mut bytes = std::io::Cursor::new(Vec::new());
    let encoded = if format == ImageFormat::Pnm {
        let subtype = match img {
            DynamicImage::ImageLuma8(_) => PnmSubtype::Graymap(SampleEncoding::Binary),
            _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
        };
        img.write_with_encoder(PnmEncoder::new(&mut bytes).with_subtype(subtype))
    } else {
        img.write_to(&mut bytes, format)
    };
    encoded.map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_atomic(path, bytes.get_ref())
}

/// Writes `bytes` to a sibling temp file and renames it onto `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
