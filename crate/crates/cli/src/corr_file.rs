//! Plain-text correspondence files.
//!
//! ```text
//! trifocal-correspondences 1
//! views 3
//! calibrated 1
//! intrinsics 1000 960 540      # optional: f cx cy, rows are pixels
//! principal-point 960 540      # optional, uncalibrated files only
//! points 2
//! x1 y1 v1 x2 y2 v2 x3 y3 v3
//! ...
//! ```
//!
//! `#` starts a comment. Invisible observations are written as `0 0 0`.
//! Uncalibrated rows are pixels; solvers see them divided by the image-size
//! scale after the principal point is removed.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use trifocal_core::geometry::ImagePoint;
use trifocal_core::pipelines::Track3;
use trifocal_core::synth::IMAGE_SIZE_PX;

pub const MAGIC: &str = "trifocal-correspondences";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFile {
    pub calibrated: bool,
    /// `(f, cx, cy)` for calibrated files given in pixels.
    pub intrinsics: Option<(f64, f64, f64)>,
    pub principal_point: Option<(f64, f64)>,
    /// `rows[i][view]`, `None` when not visible.
    pub rows: Vec<[Option<(f64, f64)>; 3]>,
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().with_context(|| format!("line {line}: '{tok}' is not a number"))?;
    if !v.is_finite() {
        bail!("line {line}: non-finite value '{tok}'");
    }
    Ok(v)
}

impl CorrespondenceFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (ln, first) = lines.next().context("line 1: empty file")?;
        let toks: Vec<&str> = first.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != MAGIC {
            bail!("line {ln}: expected '{MAGIC} {VERSION}'");
        }
        if toks[1] != VERSION.to_string() {
            bail!("line {ln}: unsupported format version '{}'", toks[1]);
        }

        let (mut views, mut calibrated, mut intrinsics, mut pp, mut count) = (None, None, None, None, None);
        for (ln, line) in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let args = &toks[1..];
            let want = |n: usize| -> Result<()> {
                if args.len() != n {
                    bail!("line {ln}: '{}' takes {n} value(s)", toks[0]);
                }
                Ok(())
            };
            match toks[0] {
                "views" => {
                    want(1)?;
                    views = Some(args[0]);
                }
                "calibrated" => {
                    want(1)?;
                    calibrated = Some(match args[0] {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        v => bail!("line {ln}: calibrated must be 0 or 1, got '{v}'"),
                    });
                }
                "intrinsics" => {
                    want(3)?;
                    let f = parse_f64(args[0], ln)?;
                    if f <= 0.0 {
                        bail!("line {ln}: focal length must be positive");
                    }
                    intrinsics = Some((f, parse_f64(args[1], ln)?, parse_f64(args[2], ln)?));
                }
                "principal-point" => {
                    want(2)?;
                    pp = Some((parse_f64(args[0], ln)?, parse_f64(args[1], ln)?));
                }
                "points" => {
                    want(1)?;
                    count = Some(args[0].parse::<usize>().with_context(|| format!("line {ln}: bad point count '{}'", args[0]))?);
                    break;
                }
                k => bail!("line {ln}: unknown header key '{k}'"),
            }
        }
        if views != Some("3") {
            bail!("header: 'views 3' is required");
        }
        let calibrated = calibrated.context("header: 'calibrated' is required")?;
        let count = count.context("header: 'points' is required")?;
        if calibrated && pp.is_some() {
            bail!("header: principal-point is only valid for uncalibrated files");
        }
        if !calibrated && intrinsics.is_some() {
            bail!("header: intrinsics are only valid for calibrated files");
        }

        let mut rows = Vec::with_capacity(count);
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 9 {
                bail!("line {ln}: expected 9 values, got {}", toks.len());
            }
            let mut row = [None; 3];
            for (v, slot) in row.iter_mut().enumerate() {
                let (x, y) = (parse_f64(toks[3 * v], ln)?, parse_f64(toks[3 * v + 1], ln)?);
                *slot = match toks[3 * v + 2] {
                    "1" => Some((x, y)),
                    "0" => None,
                    f => bail!("line {ln}: visibility must be 0 or 1, got '{f}'"),
                };
            }
            if row[0].is_none() {
                bail!("line {ln}: every point must be visible in view 1");
            }
            rows.push(row);
        }
        if rows.len() != count {
            bail!("header says {count} points, found {}", rows.len());
        }
        Ok(Self { calibrated, intrinsics, principal_point: pp, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\nviews 3\ncalibrated {}\n", self.calibrated as u8);
        if let Some((f, cx, cy)) = self.intrinsics {
            let _ = writeln!(s, "intrinsics {f} {cx} {cy}");
        }
        if let Some((cx, cy)) = self.principal_point {
            let _ = writeln!(s, "principal-point {cx} {cy}");
        }
        let _ = writeln!(s, "points {}", self.rows.len());
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|o| match o {
                    Some((x, y)) => format!("{x} {y} 1"),
                    None => "0 0 0".to_string(),
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }

    /// Rows visible in all three views, in solver input units, with their row
    /// indices.
    pub fn tracks(&self) -> (Vec<Track3>, Vec<usize>) {
        let conv = |(x, y): (f64, f64)| -> ImagePoint {
            if self.calibrated {
                match self.intrinsics {
                    Some((f, cx, cy)) => ImagePoint::new((x - cx) / f, (y - cy) / f),
                    None => ImagePoint::new(x, y),
                }
            } else {
                let (cx, cy) = self.principal_point.unwrap_or((0.0, 0.0));
                ImagePoint::new((x - cx) / IMAGE_SIZE_PX, (y - cy) / IMAGE_SIZE_PX)
            }
        };
        let mut tracks = Vec::new();
        let mut ids = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            if let [Some(a), Some(b), Some(c)] = row {
                tracks.push([conv(*a), conv(*b), conv(*c)]);
                ids.push(i);
            }
        }
        (tracks, ids)
    }
}
