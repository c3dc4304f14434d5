//! `APRF-BIN` array container and 16-bit PGM export.
//!
//! Layout: magic `APRF`, `u8` version (1), `u8` ndim, `ndim` little-endian `u32`
//! sizes, then the row-major data as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AprfError, Result};
use crate::tomo::{Beam, FanParams, Image2D, Sinogram, SinogramGeometry};

pub const MAGIC: &[u8; 4] = b"APRF";
pub const VERSION: u8 = 1;

fn format_err(reason: impl Into<String>) -> AprfError {
    AprfError::Format { what: "APRF-BIN", reason: reason.into() }
}

/// A shaped array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArrayData {
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Self { shape, data: data.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn write_array<W: Write>(mut w: W, shape: &[usize], data: &[f64]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(format_err(format!("shape {shape:?} does not match {} values", data.len())));
    }
    if shape.len() > u8::MAX as usize {
        return Err(format_err("too many dimensions"));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, shape.len() as u8])?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| format_err(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(4 * data.len());
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_array<R: Read>(mut r: R) -> Result<ArrayData> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(format_err("bad magic"));
    }
    if head[4] != VERSION {
        return Err(format_err(format!("unsupported version {}", head[4])));
    }
    let ndim = head[5] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; 4 * count];
    r.read_exact(&mut bytes)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err("trailing bytes after data"));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(ArrayData { shape, data })
}

pub fn save_array(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_array(&mut w, shape, data)?;
    w.flush()?;
    Ok(())
}

pub fn load_array(path: &Path) -> Result<ArrayData> {
    read_array(BufReader::new(File::open(path)?))
}

/// Images are stored as `[height, width]`.
pub fn save_image(path: &Path, img: &Image2D) -> Result<()> {
    save_array(path, &[img.height(), img.width()], img.values())
}

pub fn load_image(path: &Path, pixel_size: f64) -> Result<Image2D> {
    let arr = load_array(path)?;
    match arr.shape[..] {
        [h, w] => Image2D::new(w, h, pixel_size, arr.to_f64()),
        _ => Err(format_err(format!("expected a 2D array, got shape {:?}", arr.shape))),
    }
}

/// Sinograms are stored as `[views, detectors]`; the geometry travels separately.
pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    save_array(path, &[sino.num_views(), sino.num_detectors()], sino.values())
}

pub fn load_sinogram(path: &Path, geometry: SinogramGeometry) -> Result<Sinogram> {
    let arr = load_array(path)?;
    match arr.shape[..] {
        [l, w] if l == geometry.num_views && w == geometry.num_detectors => {
            Sinogram::new(geometry, arr.to_f64())
        }
        _ => Err(format_err(format!(
            "array shape {:?} does not match geometry {}x{}",
            arr.shape, geometry.num_views, geometry.num_detectors
        ))),
    }
}

/// `key = value` text describing a sinogram geometry.
pub fn geometry_to_text(g: &SinogramGeometry) -> String {
    let mut out = format!(
        "beam = {}\nnum_views = {}\nnum_detectors = {}\nangle_start = {:e}\nangle_end = {:e}\ndetector_spacing = {:e}\n",
        g.beam.name(),
        g.num_views,
        g.num_detectors,
        g.angular_range.0,
        g.angular_range.1,
        g.detector_spacing
    );
    if let Beam::Fan(fp) = g.beam {
        out.push_str(&format!(
            "source_to_axis = {:e}\nsource_to_detector = {:e}\n",
            fp.source_to_axis, fp.source_to_detector
        ));
    }
    out
}

pub fn geometry_from_text(text: &str) -> Result<SinogramGeometry> {
    let err = |reason: String| AprfError::Format { what: "geometry", reason };
    let mut keys = std::collections::BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        keys.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| keys.get(k).ok_or_else(|| err(format!("missing key {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| err(format!("{k}: {e}"))) };
    let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| err(format!("{k}: {e}"))) };
    let beam = match get("beam")?.as_str() {
        "parallel" => Beam::Parallel,
        "fan" => Beam::Fan(FanParams {
            source_to_axis: num("source_to_axis")?,
            source_to_detector: num("source_to_detector")?,
        }),
        other => return Err(err(format!("unknown beam {other:?}"))),
    };
    let g = SinogramGeometry {
        beam,
        num_views: count("num_views")?,
        num_detectors: count("num_detectors")?,
        angular_range: (num("angle_start")?, num("angle_end")?),
        detector_spacing: num("detector_spacing")?,
    };
    g.validate()?;
    Ok(g)
}

/// Sidecar path holding the geometry of the sinogram stored at `path`.
pub fn geometry_sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("geom")
}

/// Saves the sinogram and its geometry sidecar.
pub fn save_sinogram_with_geometry(path: &Path, sino: &Sinogram) -> Result<()> {
    save_sinogram(path, sino)?;
    std::fs::write(geometry_sidecar(path), geometry_to_text(sino.geometry()))?;
    Ok(())
}

pub fn load_sinogram_with_geometry(path: &Path) -> Result<Sinogram> {
    let geom = geometry_from_text(&std::fs::read_to_string(geometry_sidecar(path))?)?;
    load_sinogram(path, geom)
}

/// Writes a binary 16-bit PGM, min-max normalized. Constant inputs map to 0.
pub fn write_pgm16<W: Write>(mut w: W, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(AprfError::InvalidArgument(format!(
            "{} values for a {width}x{height} PGM",
            values.len()
        )));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let mut bytes = Vec::with_capacity(2 * values.len());
    for &v in values {
        let q = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm16(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm16(&mut w, width, height, values)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_array(&mut buf, &[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(&buf[..4], b"APRF");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..14], &3u32.to_le_bytes());
        assert_eq!(&buf[14..18], &0f32.to_le_bytes());
        assert_eq!(&buf[34..38], &5f32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 24);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut buf = Vec::new();
        write_array(&mut buf, &[2], &[1.0, 2.0]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_array(&bad[..]).is_err());
        assert!(read_array(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_array(&long[..]).is_err());
        let mut v2 = buf;
        v2[4] = 2;
        assert!(read_array(&v2[..]).is_err());
    }

    #[test]
    fn pgm_is_min_max_scaled() {
        let mut buf = Vec::new();
        write_pgm16(&mut buf, 3, 1, &[-1.0, 0.0, 1.0]).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        let px = &buf[header.len()..];
        assert_eq!(px, &[0, 0, 0x80, 0x00, 0xff, 0xff]);
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f32_values(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| ((seed.wrapping_mul(31).wrapping_add(i as u64) % 1000) as f64) * 0.37 - 100.0)
                .collect();
            let mut buf = Vec::new();
            write_array(&mut buf, &shape, &data).unwrap();
            let back = read_array(&buf[..]).unwrap();
            prop_assert_eq!(&back.shape, &shape);
            for (a, b) in back.to_f64().iter().zip(&data) {
                prop_assert_eq!(*a, (*b as f32) as f64);
            }
        }
    }
}
