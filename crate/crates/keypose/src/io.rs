//! Sequence file formats.
//!
//! CSV: header `frame,j0_x,j0_y,j0_z,j1_x,...`, one row per frame.
//! JSONL: one `{"frame": n, "joints": [[x,y,z],...]}` object per line.
//! Both are decimal text; floats are written in shortest round-trip form,
//! so save followed by load is the identity. An optional sidecar
//! `<filename>.meta` carries `action=<label>` and `fps=<float>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{MotionSequence, Pose, DEFAULT_FPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqFormat {
    Csv,
    Jsonl,
}

impl SeqFormat {
    /// Infer from the file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> SeqFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => SeqFormat::Jsonl,
            _ => SeqFormat::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlFrame {
    frame: usize,
    joints: Vec<[f64; 3]>,
}

pub fn load_sequence(path: impl AsRef<Path>, format: SeqFormat) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    let mut expected_j: Option<usize> = None;

    match format {
        SeqFormat::Csv => {
            let mut lines = text.lines().enumerate();
            let (_, header) = lines.next().ok_or_else(|| Error::EmptyFile {
                path: path.to_path_buf(),
            })?;
            let cols = header.split(',').count();
            if cols < 4 || (cols - 1) % 3 != 0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!(
                        "bad header: expected frame,j0_x,j0_y,j0_z,..., got {cols} columns"
                    ),
                });
            }
            let j = (cols - 1) / 3;
            expected_j = Some(j);
            for (idx, line) in lines {
                if line.is_empty() {
                    continue;
                }
                let lineno = idx + 1;
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != cols {
                    return Err(Error::InconsistentColumns {
                        path: path.to_path_buf(),
                        line: lineno,
                        expected: cols,
                        got: fields.len(),
                    });
                }
                let mut joints = Vec::with_capacity(j);
                for jj in 0..j {
                    let mut coord = [0.0; 3];
                    for (c, slot) in coord.iter_mut().enumerate() {
                        let field = fields[1 + jj * 3 + c];
                        *slot = parse_f64(field, path, lineno)?;
                    }
                    joints.push(coord);
                }
                frames.push(Pose::new(joints));
            }
        }
        SeqFormat::Jsonl => {
            for (idx, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let lineno = idx + 1;
                let rec: JsonlFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: e.to_string(),
                })?;
                if let Some(j) = expected_j {
                    if rec.joints.len() != j {
                        return Err(Error::InconsistentColumns {
                            path: path.to_path_buf(),
                            line: lineno,
                            expected: j,
                            got: rec.joints.len(),
                        });
                    }
                } else {
                    expected_j = Some(rec.joints.len());
                }
                frames.push(Pose::new(rec.joints));
            }
        }
    }

    if frames.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    for (i, f) in frames.iter().enumerate() {
        if !f.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: "non-finite coordinate".into(),
            });
        }
    }
    let _ = expected_j;

    let (fps, action) = read_meta(path)?;
    Ok(MotionSequence::new(
        frames,
        fps.unwrap_or(DEFAULT_FPS),
        action,
    ))
}

pub fn save_sequence(
    seq: &MotionSequence,
    path: impl AsRef<Path>,
    format: SeqFormat,
) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    match format {
        SeqFormat::Csv => {
            let j = seq.joint_count();
            body.push_str("frame");
            for jj in 0..j {
                body.push_str(&format!(",j{jj}_x,j{jj}_y,j{jj}_z"));
            }
            body.push('\n');
            for (i, pose) in seq.frames.iter().enumerate() {
                body.push_str(&(i + 1).to_string());
                for joint in &pose.joints {
                    for c in joint {
                        body.push(',');
                        body.push_str(&c.to_string());
                    }
                }
                body.push('\n');
            }
        }
        SeqFormat::Jsonl => {
            for (i, pose) in seq.frames.iter().enumerate() {
                let rec = JsonlFrame {
                    frame: i + 1,
                    joints: pose.joints.clone(),
                };
                body.push_str(&serde_json::to_string(&rec).expect("jsonl frame serializes"));
                body.push('\n');
            }
        }
    }
    write_atomic(path, body.as_bytes())?;
    write_meta(path, seq.frame_rate_hz, seq.action.as_deref())
}

/// Write via a temp file in the target directory so a failed write never
/// leaves a partial file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn meta_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

fn write_meta(path: &Path, fps: f64, action: Option<&str>) -> Result<()> {
    let mut body = format!("fps={fps}\n");
    if let Some(a) = action {
        body.push_str(&format!("action={a}\n"));
    }
    write_atomic(&meta_path(path), body.as_bytes())
}

fn read_meta(path: &Path) -> Result<(Option<f64>, Option<String>)> {
    let mp = meta_path(path);
    if !mp.exists() {
        return Ok((None, None));
    }
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut fps = None;
    let mut action = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some(("fps", v)) => {
                fps = Some(parse_f64(v, &mp, idx + 1)?);
            }
            Some(("action", v)) => action = Some(v.to_string()),
            _ => {
                return Err(Error::Parse {
                    path: mp.clone(),
                    line: idx + 1,
                    msg: format!("unknown meta entry {line:?}"),
                })
            }
        }
    }
    Ok((fps, action))
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("malformed number {field:?}"),
    })
}
