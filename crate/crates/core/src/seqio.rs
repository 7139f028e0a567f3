//! Sequence directory and plain-text file formats: binary 8-bit PGM
//! frames (`0001.pgm`, ...), `groundtruth_rect.txt` with 1-indexed
//! `x,y,w,h` lines, prediction files with a fifth score column, and
//! metric report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::metrics::MetricReport;

// ── PGM ─────────────────────────────────────────────────────────────

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    w.write_all(header.as_bytes()).map_err(|e| CoreError::io(path, e))?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let what = || format!("PGM file {}", path.display());

    // Header tokens: magic, width, height, maxval; '#' comments allowed.
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CoreError::malformed(what(), "truncated header"));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| CoreError::malformed(what(), "non-ASCII header"))?
                .to_string(),
        );
    }
    if tokens[0] != "P5" {
        return Err(CoreError::malformed(what(), format!("unsupported magic {:?}", tokens[0])));
    }
    let width: usize =
        tokens[1].parse().map_err(|_| CoreError::malformed(what(), "bad width"))?;
    let height: usize =
        tokens[2].parse().map_err(|_| CoreError::malformed(what(), "bad height"))?;
    let maxval: usize =
        tokens[3].parse().map_err(|_| CoreError::malformed(what(), "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(CoreError::malformed(what(), format!("unsupported maxval {maxval} (want 8-bit)")));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(CoreError::malformed(what(), "truncated pixel data"));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    GrayImage::new(width, height, data)
}

// ── Box files ───────────────────────────────────────────────────────

fn parse_box_line(line: &str, what: &str, lineno: usize, want_score: bool) -> Result<(BBox, f64)> {
    let parts: Vec<f64> = line
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CoreError::malformed(what, format!("line {lineno}: bad number in {line:?}")))?;
    let expected = if want_score { 5 } else { 4 };
    if parts.len() != expected {
        return Err(CoreError::malformed(
            what,
            format!("line {lineno}: want {expected} comma-separated values, got {}", parts.len()),
        ));
    }
    // Files are 1-indexed in x and y.
    let b = BBox::image_px(parts[0] - 1.0, parts[1] - 1.0, parts[2], parts[3])
        .map_err(|e| CoreError::malformed(what, format!("line {lineno}: {e}")))?;
    Ok((b, if want_score { parts[4] } else { 1.0 }))
}

pub fn read_box_file(path: &Path) -> Result<Vec<BBox>> {
    let what = format!("ground-truth file {}", path.display());
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = line.split(',').count();
        let (b, _) = parse_box_line(line, &what, i + 1, n == 5)?;
        out.push(b);
    }
    if out.is_empty() {
        return Err(CoreError::malformed(what, "no boxes"));
    }
    Ok(out)
}

pub fn write_gt_file(path: &Path, boxes: &[BBox]) -> Result<()> {
    let mut s = String::new();
    for b in boxes {
        s.push_str(&format!("{:.4},{:.4},{:.4},{:.4}\n", b.x + 1.0, b.y + 1.0, b.w, b.h));
    }
    fs::write(path, s).map_err(|e| CoreError::io(path, e))
}

pub fn write_pred_file(path: &Path, results: &[(BBox, f64)]) -> Result<()> {
    let mut s = String::new();
    for (b, score) in results {
        s.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{:.6}\n",
            b.x + 1.0,
            b.y + 1.0,
            b.w,
            b.h,
            score
        ));
    }
    fs::write(path, s).map_err(|e| CoreError::io(path, e))
}

// ── Sequence directories ────────────────────────────────────────────

pub struct Sequence {
    pub frames: Vec<GrayImage>,
    pub ground_truth: Vec<BBox>,
}

/// Write frames as `0001.pgm`... plus `groundtruth_rect.txt`.
pub fn write_sequence(dir: &Path, frames: &[GrayImage], gt: &[BBox]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        write_pgm(&dir.join(format!("{:04}.pgm", i + 1)), frame)?;
    }
    write_gt_file(&dir.join("groundtruth_rect.txt"), gt)
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let what = format!("sequence directory {}", dir.display());
    let entries = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut frame_paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    frame_paths.sort();
    if frame_paths.is_empty() {
        return Err(CoreError::malformed(what, "no .pgm frames"));
    }
    let frames = frame_paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    let ground_truth = read_box_file(&dir.join("groundtruth_rect.txt"))?;
    if ground_truth.is_empty() {
        return Err(CoreError::malformed(what, "empty ground truth"));
    }
    Ok(Sequence { frames, ground_truth })
}

// ── Metric reports ──────────────────────────────────────────────────

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut s = String::new();
    s.push_str(&format!("frames = {}\n", report.per_frame_iou.len()));
    s.push_str(&format!("suc = {:.6}\n", report.suc));
    s.push_str(&format!("pre = {:.6}\n", report.pre));
    s.push_str(&format!("normp = {:.6}\n", report.normp));
    s.push_str("# frame iou center_err norm_center_err\n");
    for i in 0..report.per_frame_iou.len() {
        s.push_str(&format!(
            "{} {:.6} {:.6} {:.6}\n",
            i + 1,
            report.per_frame_iou[i],
            report.per_frame_center_err[i],
            report.per_frame_norm_center_err[i]
        ));
    }
    fs::write(path, s).map_err(|e| CoreError::io(path, e))
}
