use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DataError, Dataset, GrayImage, Sample, Split};

fn read_png(path: &Path) -> Result<GrayImage, DataError> {
    let img_err = |msg: String| DataError::Image { path: path.display().to_string(), msg };
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| img_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| img_err("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(img_err(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(img_err(format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for px in buf[..info.buffer_size()].chunks(channels) {
        let v = if channels >= 3 {
            (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0
        } else {
            px[0] as f64
        };
        pixels.push(v.round() / 255.0);
    }
    Ok(GrayImage::new(h, w, pixels))
}

fn write_png(path: &Path, img: &GrayImage) -> Result<(), DataError> {
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| DataError::Image { path: path.display().to_string(), msg: e.to_string() };
    let mut writer = enc.write_header().map_err(to_err)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}

/// Writes `images/NNNNN.png` and `manifest.tsv` under `dir`; returns the
/// manifest path.
pub fn write_manifest(ds: &Dataset, dir: &Path) -> Result<std::path::PathBuf, DataError> {
    fs::create_dir_all(dir.join("images"))?;
    let path = dir.join("manifest.tsv");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    for (i, s) in ds.samples.iter().enumerate() {
        let rel = format!("images/{i:05}.png");
        write_png(&dir.join(&rel), &s.image)?;
        writeln!(out, "{rel}\t{}\t{}\t{}", s.text, s.writer, s.split.as_str())?;
    }
    out.flush()?;
    Ok(path)
}

/// Reads a TSV manifest (`path`, `transcription`, `writer`, `split`); image
/// paths are relative to the manifest. Blank lines and `#` comments are
/// skipped. Transcriptions are lowercased.
pub fn load_corpus(manifest: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(DataError::ManifestParse { line: line_no, msg: format!("expected 4 columns, found {}", cols.len()) });
        }
        let text = cols[1].to_lowercase();
        if text.is_empty() || cols[2].is_empty() {
            return Err(DataError::ManifestParse { line: line_no, msg: "empty transcription or writer".into() });
        }
        let split: Split = cols[3].trim().parse().map_err(|msg| DataError::ManifestParse { line: line_no, msg })?;
        let image = read_png(&base.join(cols[0]))?;
        if image.width == 0 || image.height == 0 {
            return Err(DataError::ManifestParse { line: line_no, msg: "empty image".into() });
        }
        samples.push(Sample { image, text, writer: cols[2].to_string(), split });
    }
    let ds = Dataset { samples };
    ds.validate_disjoint()?;
    if ds.split(Split::Test).is_empty() {
        log::warn!("{}: test split is empty", manifest.display());
    }
    Ok(ds)
}
