//! Binary PGM (P5) reading and writing, plus the paired-file dataset layout.
//!
//! Images are exchanged as 8-bit grayscale: values in `[0, 1]` are scaled
//! by 255 and rounded to nearest on save, divided by the stored maxval on
//! load. A dataset directory holds `NNNN_img.pgm` / `NNNN_mask.pgm` pairs
//! with 4-digit zero-padded indices.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SegSample;
use crate::scalar::{rf, Real};
use crate::tensor::Tensor4;

/// Writes one plane as binary PGM with maxval 255. Values must be in `[0, 1]`.
pub fn save_pgm<R: Real>(data: &[R], h: usize, w: usize, path: &Path) -> Result<()> {
    if data.len() != h * w {
        return Err(Error::Dimension(format!(
            "plane length {} does not match {h}x{w}",
            data.len()
        )));
    }
    if data.iter().any(|&v| v < R::zero() || v > R::one()) {
        return Err(Error::Input("pgm values must lie in [0, 1]".into()));
    }
    let mut bytes = Vec::with_capacity(32 + h * w);
    write!(&mut bytes, "P5\n{w} {h}\n255\n")?;
    bytes.extend(
        data.iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, bytes)?;
    Ok(())
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    /// Advances past whitespace and `#` comments, then reads one token.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated pgm header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("bad pgm {what}")))
    }
}

/// Reads a binary PGM into a `[0, 1]` plane, returning `(data, h, w)`.
pub fn load_pgm<R: Real>(path: &Path) -> Result<(Vec<R>, usize, usize)> {
    let bytes = fs::read(path)?;
    let mut p = HeaderParser {
        bytes: &bytes,
        pos: 0,
    };
    let magic = p.token()?;
    if magic == b"P2" {
        return Err(Error::Format(
            "ascii pgm (P2) unsupported, only binary P5".into(),
        ));
    }
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "bad pgm magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let w = p.number("width")?;
    let h = p.number("height")?;
    let maxval = p.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::Format("pgm dimensions must be nonzero".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "pgm maxval {maxval} outside 1..=255"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing raster separator".into()));
    }
    let raster = &bytes[p.pos + 1..];
    if raster.len() != h * w {
        return Err(Error::Format(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            h * w
        )));
    }
    let scale = 1.0 / maxval as f64;
    Ok((
        raster.iter().map(|&b| rf::<R>(b as f64 * scale)).collect(),
        h,
        w,
    ))
}

/// Loads `NNNN_img.pgm` / `NNNN_mask.pgm` pairs in ascending index order.
/// Masks are binarized at byte value 128.
pub fn load_dataset<R: Real>(dir: &Path) -> Result<Vec<SegSample<R>>> {
    let mut pairs: BTreeMap<u32, (bool, bool)> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some((index, kind)) = parse_pair_name(name) else {
            continue;
        };
        let slot = pairs.entry(index).or_insert((false, false));
        if kind == "img" {
            slot.0 = true;
        } else {
            slot.1 = true;
        }
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (&index, &(has_img, has_mask)) in &pairs {
        if !has_img || !has_mask {
            let missing = if has_img { "mask" } else { "image" };
            return Err(Error::Input(format!(
                "dataset pair {index:04} is missing its {missing} file"
            )));
        }
        let (img, ih, iw) = load_pgm::<R>(&dir.join(format!("{index:04}_img.pgm")))?;
        let (mask_raw, mh, mw) = load_pgm::<R>(&dir.join(format!("{index:04}_mask.pgm")))?;
        if (ih, iw) != (mh, mw) {
            return Err(Error::Input(format!(
                "pair {index:04}: image is {ih}x{iw} but mask is {mh}x{mw}"
            )));
        }
        let threshold = rf::<R>(128.0 / 255.0);
        let mask = mask_raw
            .into_iter()
            .map(|v| if v >= threshold { R::one() } else { R::zero() })
            .collect();
        out.push(
            SegSample::new(
                Tensor4::from_vec(1, 1, ih, iw, img)?,
                Tensor4::from_vec(1, 1, mh, mw, mask)?,
            )
            .map_err(|e| Error::Input(format!("pair {index:04}: {e}")))?,
        );
    }
    Ok(out)
}

/// Writes a dataset as index-named image/mask pairs.
pub fn save_dataset<R: Real>(samples: &[SegSample<R>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = s.size();
        save_pgm(s.image().plane(0, 0), h, w, &dir.join(format!("{i:04}_img.pgm")))?;
        save_pgm(s.mask().plane(0, 0), h, w, &dir.join(format!("{i:04}_mask.pgm")))?;
    }
    Ok(())
}

fn parse_pair_name(name: &str) -> Option<(u32, &str)> {
    let stem = name.strip_suffix(".pgm")?;
    let (digits, kind) = stem.split_once('_')?;
    if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if kind != "img" && kind != "mask" {
        return None;
    }
    Some((digits.parse().ok()?, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("drsn-pgm-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tmpdir("mask");
        let mask: Vec<f64> = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let path = dir.join("m.pgm");
        save_pgm(&mask, 2, 3, &path).unwrap();
        let (back, h, w) = load_pgm::<f64>(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, mask);
    }

    #[test]
    fn image_round_trip_within_half_step() {
        let dir = tmpdir("img");
        let mut rng = SplitMix64::new(3);
        let img: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
        let path = dir.join("i.pgm");
        save_pgm(&img, 8, 8, &path).unwrap();
        let (back, _, _) = load_pgm::<f64>(&path).unwrap();
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn p2_and_garbage_rejected() {
        let dir = tmpdir("bad");
        let p2 = dir.join("a.pgm");
        fs::write(&p2, b"P2\n2 2\n255\n0 1 2 3\n").unwrap();
        match load_pgm::<f64>(&p2) {
            Err(Error::Format(msg)) => assert!(msg.contains("P2"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
        let junk = dir.join("b.pgm");
        fs::write(&junk, b"hello world").unwrap();
        assert!(matches!(load_pgm::<f64>(&junk), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_raster_rejected() {
        let dir = tmpdir("trunc");
        let path = dir.join("t.pgm");
        save_pgm(&vec![0.5f64; 16], 4, 4, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_pgm::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn save_rejects_out_of_range() {
        let dir = tmpdir("range");
        assert!(matches!(
            save_pgm(&[0.5f64, 1.5], 1, 2, &dir.join("x.pgm")),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tmpdir("comment");
        let path = dir.join("c.pgm");
        fs::write(&path, b"P5\n# a comment\n2 1\n# another\n255\n\x00\xff").unwrap();
        let (data, h, w) = load_pgm::<f64>(&path).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(data, vec![0.0, 1.0]);
    }

    #[test]
    fn dataset_round_trip_and_order() {
        let dir = tmpdir("ds");
        let spec = crate::datagen::SynthSpec {
            count: 3,
            size: 16,
            seed: 8,
            ..Default::default()
        };
        let samples = crate::datagen::generate_synthetic::<f64>(&spec).unwrap();
        save_dataset(&samples, &dir).unwrap();
        let back = load_dataset::<f64>(&dir).unwrap();
        assert_eq!(back.len(), 3);
        for (orig, loaded) in samples.iter().zip(&back) {
            assert_eq!(orig.mask().data(), loaded.mask().data());
            for (a, b) in orig.image().data().iter().zip(loaded.image().data()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }

    #[test]
    fn empty_dir_gives_empty_list() {
        let dir = tmpdir("empty");
        assert!(load_dataset::<f64>(&dir).unwrap().is_empty());
    }

    #[test]
    fn missing_partner_is_named() {
        let dir = tmpdir("partner");
        save_pgm(&vec![0.0f64; 16], 4, 4, &dir.join("0002_img.pgm")).unwrap();
        match load_dataset::<f64>(&dir) {
            Err(Error::Input(msg)) => assert!(msg.contains("0002"), "{msg}"),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tmpdir("mismatch");
        save_pgm(&vec![0.0f64; 16], 4, 4, &dir.join("0000_img.pgm")).unwrap();
        save_pgm(&vec![0.0f64; 9], 3, 3, &dir.join("0000_mask.pgm")).unwrap();
        match load_dataset::<f64>(&dir) {
            Err(Error::Input(msg)) => assert!(msg.contains("0000"), "{msg}"),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn unrelated_files_ignored() {
        let dir = tmpdir("ignore");
        fs::write(dir.join("notes.txt"), b"hi").unwrap();
        fs::write(dir.join("12_img.pgm"), b"P5\n1 1\n255\n\x00").unwrap(); // not 4-digit
        assert!(load_dataset::<f64>(&dir).unwrap().is_empty());
    }
}
