use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Canvas height of every text image.
pub const IMAGE_HEIGHT: usize = 64;
/// Canvas width of every text image.
pub const IMAGE_WIDTH: usize = 256;
/// Background (paper) value.
pub const BACKGROUND: f32 = 1.0;

/// Single-channel image with values in `[-1, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                format!("{height}x{width} = {} values", height * width),
                data.len(),
            ));
        }
        Ok(Raster {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Raster {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Blank canvas of the standard text-image size.
    pub fn blank() -> Self {
        Self::filled(IMAGE_HEIGHT, IMAGE_WIDTH, BACKGROUND)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Checks the canvas size and value range of a text image.
    pub fn check_text_image(&self) -> Result<()> {
        if self.dims() != (IMAGE_HEIGHT, IMAGE_WIDTH) {
            return Err(Error::shape(
                format!("{IMAGE_HEIGHT}x{IMAGE_WIDTH}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        if let Some(v) = self.data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [-1, 1]"
            )));
        }
        Ok(())
    }

    /// Snaps every value to the nearest of the 256 levels an 8-bit raster can hold.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = level_to_value(value_to_level(*v));
        }
    }

    pub fn to_levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| value_to_level(v)).collect()
    }

    pub fn from_levels(height: usize, width: usize, levels: &[u8]) -> Result<Self> {
        Raster::new(
            height,
            width,
            levels.iter().map(|&q| level_to_value(q)).collect(),
        )
    }

    /// `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(
            Tensor::from_slice(&self.data, (1, 1, self.height, self.width), device)?
                .to_dtype(dtype)?,
        )
    }

    /// Stacks equally-sized rasters into a `(B, 1, H, W)` tensor.
    pub fn stack(images: &[&Raster], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero images".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.dims() != (h, w) {
                return Err(Error::shape(
                    format!("{h}x{w}"),
                    format!("{}x{}", img.height, img.width),
                ));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
    }

    /// Splits a `(B, 1, H, W)` or `(1, H, W)` tensor back into rasters.
    pub fn unstack(t: &Tensor) -> Result<Vec<Raster>> {
        let t = match t.rank() {
            3 => t.unsqueeze(0)?,
            4 => t.clone(),
            r => {
                return Err(Error::shape(
                    "rank 3 or 4 image tensor",
                    format!("rank {r}"),
                ))
            }
        };
        let (b, c, h, w) = t.dims4()?;
        if c != 1 {
            return Err(Error::shape("1 channel", format!("{c} channels")));
        }
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(flat
            .chunks_exact(h * w)
            .take(b)
            .map(|chunk| Raster {
                height: h,
                width: w,
                data: chunk.to_vec(),
            })
            .collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img =
            image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_levels())
                .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        Raster::from_levels(h as usize, w as usize, img.as_raw())
    }
}

fn value_to_level(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn level_to_value(q: u8) -> f32 {
    q as f32 / 127.5 - 1.0
}

/// Tiles images into a grid (`cols` wide) separated by a 2 px mid-grey gutter.
pub fn contact_sheet(images: &[Raster], cols: usize) -> Result<Raster> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("contact sheet needs at least one image".into()))?;
    let (h, w) = first.dims();
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    const GUTTER: usize = 2;
    let sheet_h = rows * h + (rows + 1) * GUTTER;
    let sheet_w = cols * w + (cols + 1) * GUTTER;
    let mut sheet = Raster::filled(sheet_h, sheet_w, 0.0);
    for (i, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::shape(
                format!("{h}x{w}"),
                format!("{}x{}", img.height, img.width),
            ));
        }
        let top = GUTTER + (i / cols) * (h + GUTTER);
        let left = GUTTER + (i % cols) * (w + GUTTER);
        for r in 0..h {
            let dst = (top + r) * sheet_w + left;
            sheet.data[dst..dst + w].copy_from_slice(&img.data[r * w..(r + 1) * w]);
        }
    }
    Ok(sheet)
}
