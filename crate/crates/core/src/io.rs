//! File formats: 8-bit PGM/PPM/PNG images and the little-endian `FMP1`
//! (feature map), `NNF1` (correspondence field) and `WGT1` (conv weights)
//! dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::aggregate::ConvWeights;
use crate::error::{Error, Result};
use crate::matcher::{Coord, Nnf, PositionMap, RelevanceMap};
use crate::tensor::{FeatureMap, Image};

pub const FMP_MAGIC: &[u8; 4] = b"FMP1";
pub const NNF_MAGIC: &[u8; 4] = b"NNF1";
pub const WGT_MAGIC: &[u8; 4] = b"WGT1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads a PGM, PPM or PNG file. Grayscale inputs give one channel, anything
/// else is converted to RGB. Samples are mapped to `[0, 1]` by `/255`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img_err = |source| Error::Image { path: path.to_path_buf(), source };
    let decoded = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(img_err)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) => {
            (1, decoded.to_luma8().into_raw())
        }
        other => (3, other.to_rgb8().into_raw()),
    };
    Image::new(channels, h, w, bytes.into_iter().map(|b| b as f64 / 255.0).collect())
}

/// Quantises to 8 bits (`round(255 v)` after clamping to `[0, 1]`).
pub fn to_bytes(img: &Image) -> Vec<u8> {
    img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes binary PGM (one channel) or PPM (three channels), or PNG when the
/// extension is `.png`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes = to_bytes(img);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 { ExtendedColorType::L8 } else { ExtendedColorType::Rgb8 };
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let encoded = if png {
        image::codecs::png::PngEncoder::new(&mut out).write_image(&bytes, w, h, color)
    } else {
        let subtype = if img.channels() == 1 {
            PnmSubtype::Graymap(SampleEncoding::Binary)
        } else {
            PnmSubtype::Pixmap(SampleEncoding::Binary)
        };
        PnmEncoder::new(&mut out).with_subtype(subtype).write_image(&bytes, w, h, color)
    };
    encoded.map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    out.flush().map_err(io_err(path))
}

fn read_magic(r: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(io_err(path))?;
    if &got != magic {
        return Err(format_err(
            path,
            format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(&got)),
        ));
    }
    Ok(())
}

fn read_u32s<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[usize; N]> {
    let mut out = [0usize; N];
    for v in &mut out {
        *v = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
    }
    Ok(out)
}

fn read_f32s(r: &mut impl Read, path: &Path, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0f32; count];
    r.read_f32_into::<LittleEndian>(&mut buf).map_err(io_err(path))?;
    Ok(buf.into_iter().map(f64::from).collect())
}

fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(io_err(path))? {
        0 => Ok(()),
        _ => Err(format_err(path, "trailing bytes after payload")),
    }
}

fn dim_u32(v: usize, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| format_err(path, format!("dimension {v} does not fit in u32")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

/// Feature map dump, channel-planar: all of channel 0 row-major, then channel 1, ...
pub fn write_fmp(path: &Path, fm: &FeatureMap) -> Result<()> {
    let mut w = create(path)?;
    let go = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FMP_MAGIC)?;
        for d in [fm.channels(), fm.height(), fm.width()] {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for k in 0..fm.channels() {
            for r in 0..fm.height() {
                for c in 0..fm.width() {
                    w.write_f32::<LittleEndian>(fm.get(r, c, k) as f32)?;
                }
            }
        }
        w.flush()
    };
    for d in [fm.channels(), fm.height(), fm.width()] {
        dim_u32(d, path)?;
    }
    go(&mut w).map_err(io_err(path))
}

pub fn read_fmp(path: &Path) -> Result<FeatureMap> {
    let mut r = open(path)?;
    read_magic(&mut r, path, FMP_MAGIC)?;
    let [c, h, w] = read_u32s::<3>(&mut r, path)?;
    let planar = read_f32s(&mut r, path, c * h * w)?;
    expect_eof(&mut r, path)?;
    let plane = h * w;
    FeatureMap::from_fn(c, h, w, |row, col, k| planar[k * plane + row * w + col])
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn write_nnf(path: &Path, nnf: &Nnf) -> Result<()> {
    let (h, w) = nnf.dims();
    dim_u32(h, path)?;
    dim_u32(w, path)?;
    let mut out = create(path)?;
    let go = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(NNF_MAGIC)?;
        out.write_u32::<LittleEndian>(h as u32)?;
        out.write_u32::<LittleEndian>(w as u32)?;
        for (p, s) in nnf.positions.coords().iter().zip(nnf.relevance.values()) {
            out.write_u32::<LittleEndian>(p.row)?;
            out.write_u32::<LittleEndian>(p.col)?;
            out.write_f32::<LittleEndian>(*s as f32)?;
        }
        out.flush()
    };
    go(&mut out).map_err(io_err(path))
}

pub fn read_nnf(path: &Path) -> Result<Nnf> {
    let mut r = open(path)?;
    read_magic(&mut r, path, NNF_MAGIC)?;
    let [h, w] = read_u32s::<2>(&mut r, path)?;
    let mut coords = Vec::with_capacity(h * w);
    let mut rel = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let [row, col] = read_u32s::<2>(&mut r, path)?;
        coords.push(Coord::new(row as u32, col as u32));
        rel.push(r.read_f32::<LittleEndian>().map_err(io_err(path))? as f64);
    }
    expect_eof(&mut r, path)?;
    let bad = |e: Error| format_err(path, e.to_string());
    Ok(Nnf {
        positions: PositionMap::new(h, w, coords).map_err(bad)?,
        relevance: RelevanceMap::new(h, w, rel).map_err(bad)?,
    })
}

pub fn write_weights(path: &Path, wts: &ConvWeights) -> Result<()> {
    let dims = [wts.out_channels, wts.in_channels, wts.kh, wts.kw];
    for d in dims {
        dim_u32(d, path)?;
    }
    let mut out = create(path)?;
    let go = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(WGT_MAGIC)?;
        for d in dims {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in &wts.data {
            out.write_f32::<LittleEndian>(*v as f32)?;
        }
        out.flush()
    };
    go(&mut out).map_err(io_err(path))
}

pub fn read_weights(path: &Path) -> Result<ConvWeights> {
    let mut r = open(path)?;
    read_magic(&mut r, path, WGT_MAGIC)?;
    let [o, i, kh, kw] = read_u32s::<4>(&mut r, path)?;
    let data = read_f32s(&mut r, path, o * i * kh * kw)?;
    expect_eof(&mut r, path)?;
    ConvWeights::new(o, i, kh, kw, data).map_err(|e| format_err(path, e.to_string()))
}
