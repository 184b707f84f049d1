//! Dataset directory layout and the file formats in it.
//!
//! ```text
//! dataset/
//!   scene.toml            scene spec the data was generated from (optional)
//!   camera.cfg            key=value intrinsics
//!   classes.txt           class_id,name,moveable per line
//!   groundtruth.txt       TUM rows: timestamp tx ty tz qx qy qz qw
//!   frames/
//!     frame_000000.feat       "# timestamp <t>" then "u v raw_depth descriptor_hex landmark_id"
//!     frame_000000_mask.pgm   P5 graymap, pixel = instance_id + 1, 0 = background
//!     frame_000000_mask.txt   "instance_id class_id refined" per region
//!     frame_000000_depth.pgm  P5 graymap, 16-bit big-endian raw depth
//! ```
//!
//! Masks also load from P2 (ASCII) graymaps. Floats are written in Rust's
//! shortest round-trip form, so reading a written file reproduces the exact
//! values.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::ConfigFragment;
use crate::evaluation::Trajectory;
use crate::geometry::{CameraModel, DepthGrid, Pixel, Pose};
use crate::segmentation::{ClassTable, FrameSegmentation, MaskGrid, SegmentedRegion};
use crate::simulator::{pose_from_tum_row, pose_to_tum_row, GroundTruthBundle};
use crate::tracking::{Descriptor, Feature, FrameObservation};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Portable graymaps.

/// Writes an 8-bit P5 graymap.
pub fn write_pgm8(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<(), DatasetError> {
    debug_assert_eq!(data.len(), (width * height) as usize);
    let mut f = BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(f, "P5\n{width} {height}\n255\n").map_err(io_err(path))?;
    f.write_all(data).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Writes a 16-bit P5 graymap (big-endian samples, per the format).
pub fn write_pgm16(path: &Path, width: u32, height: u32, data: &[u16]) -> Result<(), DatasetError> {
    debug_assert_eq!(data.len(), (width * height) as usize);
    let mut f = BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(f, "P5\n{width} {height}\n65535\n").map_err(io_err(path))?;
    let mut bytes = Vec::with_capacity(data.len() * 2);
    for v in data {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    f.write_all(&bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Graymap of either depth (P2 or P5), returned as 16-bit samples.
pub fn read_pgm(path: &Path) -> Result<(u32, u32, u16, Vec<u16>), DatasetError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    let mut pos = 0usize;
    let mut token = |raw: &[u8]| -> Result<String, DatasetError> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };
    let magic = token(&raw)?;
    if magic != "P5" && magic != "P2" {
        return Err(format_err(path, format!("unsupported graymap magic {magic}")));
    }
    let width: u32 = token(&raw)?
        .parse()
        .map_err(|_| format_err(path, "bad width"))?;
    let height: u32 = token(&raw)?
        .parse()
        .map_err(|_| format_err(path, "bad height"))?;
    let maxval: u16 = token(&raw)?
        .parse()
        .map_err(|_| format_err(path, "bad maxval"))?;
    let n = (width * height) as usize;
    let mut data = Vec::with_capacity(n);
    if magic == "P2" {
        for _ in 0..n {
            let v: u16 = token(&raw)?
                .parse()
                .map_err(|_| format_err(path, "bad P2 sample"))?;
            data.push(v);
        }
    } else {
        // One whitespace byte separates the header from binary data.
        pos += 1;
        if maxval > 255 {
            if raw.len() < pos + 2 * n {
                return Err(format_err(path, "truncated P5 data"));
            }
            for i in 0..n {
                data.push(u16::from_be_bytes([raw[pos + 2 * i], raw[pos + 2 * i + 1]]));
            }
        } else {
            if raw.len() < pos + n {
                return Err(format_err(path, "truncated P5 data"));
            }
            data.extend(raw[pos..pos + n].iter().map(|&b| b as u16));
        }
    }
    Ok((width, height, maxval, data))
}

// ---------------------------------------------------------------------------
// Masks.

/// Writes a frame's instance masks as a graymap (instance_id + 1) plus the
/// sidecar mapping instance ids to classes.
pub fn write_mask(dir: &Path, seg: &FrameSegmentation) -> Result<(), DatasetError> {
    let mut labels = vec![0u8; (seg.width * seg.height) as usize];
    for r in seg.regions() {
        if r.instance_id >= 255 {
            return Err(DatasetError::Invalid(format!(
                "instance id {} does not fit the graymap encoding",
                r.instance_id
            )));
        }
        for (x, y) in r.mask.iter_pixels() {
            labels[(y * seg.width + x) as usize] = (r.instance_id + 1) as u8;
        }
    }
    let pgm = dir.join(format!("frame_{:06}_mask.pgm", seg.frame_index));
    write_pgm8(&pgm, seg.width, seg.height, &labels)?;
    let sidecar = dir.join(format!("frame_{:06}_mask.txt", seg.frame_index));
    let mut text = String::from("# instance_id class_id refined\n");
    for r in seg.regions() {
        writeln!(
            text,
            "{} {} {}",
            r.instance_id,
            r.class_id,
            if r.refined { 1 } else { 0 }
        )
        .expect("string write");
    }
    std::fs::write(&sidecar, text).map_err(io_err(&sidecar))
}

/// Reads a frame's masks back into a segmentation.
pub fn read_mask(dir: &Path, frame_index: usize) -> Result<FrameSegmentation, DatasetError> {
    let pgm_path = dir.join(format!("frame_{frame_index:06}_mask.pgm"));
    let (width, height, _, labels) = read_pgm(&pgm_path)?;
    let sidecar = dir.join(format!("frame_{frame_index:06}_mask.txt"));
    let text = std::fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
    let mut regions: Vec<SegmentedRegion> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(format_err(&sidecar, format!("bad sidecar line '{line}'")));
        }
        let instance_id: u32 = fields[0]
            .parse()
            .map_err(|_| format_err(&sidecar, "bad instance id"))?;
        let class_id: u32 = fields[1]
            .parse()
            .map_err(|_| format_err(&sidecar, "bad class id"))?;
        let refined = fields.get(2).map(|v| *v == "1").unwrap_or(false);
        let mut region = SegmentedRegion::new(instance_id, class_id, MaskGrid::new(width, height));
        region.refined = refined;
        regions.push(region);
    }
    for y in 0..height {
        for x in 0..width {
            let label = labels[(y * width + x) as usize];
            if label == 0 {
                continue;
            }
            let instance = (label - 1) as u32;
            let region = regions
                .iter_mut()
                .find(|r| r.instance_id == instance)
                .ok_or_else(|| {
                    format_err(&pgm_path, format!("pixel label {label} missing from sidecar"))
                })?;
            region.mask.set(x, y);
        }
    }
    regions.retain(|r| !r.mask.is_empty());
    FrameSegmentation::new(frame_index, width, height, regions)
        .map_err(|e| format_err(&pgm_path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Features.

pub fn write_features(dir: &Path, obs: &FrameObservation) -> Result<(), DatasetError> {
    let path = dir.join(format!("frame_{:06}.feat", obs.frame_index));
    let mut text = format!("# timestamp {}\n", obs.timestamp);
    for f in &obs.features {
        let hex: String = f
            .descriptor
            .bytes()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let landmark = match f.landmark_hint {
            Some(id) => id.to_string(),
            None => "-".to_string(),
        };
        writeln!(
            text,
            "{} {} {} {} {}",
            f.pixel.u, f.pixel.v, f.raw_depth, hex, landmark
        )
        .expect("string write");
    }
    std::fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_features(
    dir: &Path,
    frame_index: usize,
    depth_grid: DepthGrid,
) -> Result<FrameObservation, DatasetError> {
    let path = dir.join(format!("frame_{frame_index:06}.feat"));
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let reader = std::io::BufReader::new(file);
    let mut timestamp = frame_index as f64;
    let mut features = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            if parts.next() == Some("timestamp") {
                if let Some(Ok(t)) = parts.next().map(str::parse) {
                    timestamp = t;
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(format_err(
                &path,
                format!("line {}: expected 5 fields", lineno + 1),
            ));
        }
        let u: f64 = fields[0]
            .parse()
            .map_err(|_| format_err(&path, format!("line {}: bad u", lineno + 1)))?;
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| format_err(&path, format!("line {}: bad v", lineno + 1)))?;
        let raw_depth: f64 = fields[2]
            .parse()
            .map_err(|_| format_err(&path, format!("line {}: bad depth", lineno + 1)))?;
        let hex = fields[3];
        if !hex.len().is_multiple_of(2) {
            return Err(format_err(&path, format!("line {}: odd hex", lineno + 1)));
        }
        let bytes = (0..hex.len() / 2)
            .map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|_| format_err(&path, format!("line {}: bad hex", lineno + 1)))?;
        let landmark_hint = if fields[4] == "-" {
            None
        } else {
            Some(fields[4].parse().map_err(|_| {
                format_err(&path, format!("line {}: bad landmark id", lineno + 1))
            })?)
        };
        features.push(Feature {
            pixel: Pixel::new(u, v),
            raw_depth,
            descriptor: Descriptor::new(bytes),
            landmark_hint,
        });
    }
    FrameObservation::new(frame_index, timestamp, features, depth_grid)
        .map_err(|e| format_err(&path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Class table.

pub fn write_class_table(path: &Path, table: &ClassTable) -> Result<(), DatasetError> {
    let mut text = String::from("# class_id,name,moveable\n");
    for (id, entry) in table.iter() {
        writeln!(
            text,
            "{id},{},{}",
            entry.name,
            if entry.moveable { 1 } else { 0 }
        )
        .expect("string write");
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_class_table(path: &Path) -> Result<ClassTable, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut table = ClassTable::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format_err(
                path,
                format!("line {}: expected class_id,name,moveable", lineno + 1),
            ));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| format_err(path, format!("line {}: bad class id", lineno + 1)))?;
        let moveable = matches!(fields[2].trim(), "1" | "true");
        table.insert(id, fields[1].trim(), moveable);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Trajectories (TUM text rows).

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), DatasetError> {
    let mut text = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, pose) in traj.samples() {
        let row = pose_to_tum_row(pose);
        writeln!(
            text,
            "{t} {} {} {} {} {} {} {}",
            row[0], row[1], row[2], row[3], row[4], row[5], row[6]
        )
        .expect("string write");
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut samples: Vec<(f64, Pose)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| format_err(path, format!("line {}: bad number", lineno + 1)))?;
        if fields.len() != 8 {
            return Err(format_err(
                path,
                format!("line {}: expected 8 fields", lineno + 1),
            ));
        }
        let row: [f64; 7] = fields[1..8].try_into().expect("7 fields");
        let pose = pose_from_tum_row(&row)
            .map_err(|e| format_err(path, format!("line {}: {e}", lineno + 1)))?;
        samples.push((fields[0], pose));
    }
    Trajectory::new(samples).map_err(|e| format_err(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Whole datasets.

/// Writes a generated bundle as a dataset directory. `scene_toml`, when
/// given, is stored alongside for reproducibility.
pub fn write_dataset(
    dir: &Path,
    bundle: &GroundTruthBundle,
    scene_toml: Option<&str>,
) -> Result<(), DatasetError> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    if let Some(toml) = scene_toml {
        let p = dir.join("scene.toml");
        std::fs::write(&p, toml).map_err(io_err(&p))?;
    }
    let cam_path = dir.join("camera.cfg");
    std::fs::write(&cam_path, ConfigFragment::camera_file_text(&bundle.cam))
        .map_err(io_err(&cam_path))?;
    write_class_table(&dir.join("classes.txt"), &bundle.class_table)?;
    let mut gt = Trajectory::empty();
    for frame in &bundle.frames {
        gt.push(frame.observation.timestamp, frame.pose)
            .map_err(|e| DatasetError::Invalid(e.to_string()))?;
        write_features(&frames_dir, &frame.observation)?;
        write_mask(&frames_dir, &frame.segmentation)?;
        let depth_path = frames_dir.join(format!("frame_{:06}_depth.pgm", frame.observation.frame_index));
        write_pgm16(
            &depth_path,
            bundle.cam.width,
            bundle.cam.height,
            frame.observation.depth_grid.data(),
        )?;
    }
    write_trajectory(&dir.join("groundtruth.txt"), &gt)
}

/// Lazily reads a dataset directory frame by frame.
pub struct DatasetReader {
    dir: PathBuf,
    cam: CameraModel,
    class_table: ClassTable,
    n_frames: usize,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let cam = ConfigFragment::load(&dir.join("camera.cfg"))?.camera()?;
        let class_table = read_class_table(&dir.join("classes.txt"))?;
        let frames_dir = dir.join("frames");
        let mut n_frames = 0;
        while frames_dir
            .join(format!("frame_{n_frames:06}.feat"))
            .exists()
        {
            n_frames += 1;
        }
        if n_frames == 0 {
            return Err(DatasetError::Invalid(format!(
                "no frames found under {}",
                frames_dir.display()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            cam,
            class_table,
            n_frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.n_frames
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    pub fn observation(&self, index: usize) -> Result<FrameObservation, DatasetError> {
        let frames_dir = self.dir.join("frames");
        let depth_path = frames_dir.join(format!("frame_{index:06}_depth.pgm"));
        let (w, h, _, data) = read_pgm(&depth_path)?;
        let depth = DepthGrid::from_data(w, h, data)
            .ok_or_else(|| format_err(&depth_path, "depth size mismatch"))?;
        read_features(&frames_dir, index, depth)
    }

    pub fn segmentation(&self, index: usize) -> Result<FrameSegmentation, DatasetError> {
        read_mask(&self.dir.join("frames"), index)
    }

    pub fn ground_truth(&self) -> Result<Trajectory, DatasetError> {
        read_trajectory(&self.dir.join("groundtruth.txt"))
    }
}
