//! Dataset directories: a tab-separated `manifest.txt` plus one binary PGM
//! per frame.

use std::fs;
use std::path::{Path, PathBuf};

use super::problem::{sequence_labels, SequenceProblem};
use super::program::TransformProgram;
use super::sprites::MovingSpriteVideo;
use super::Frame;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    bytes.extend(frame.pixels().iter().map(|&v| (v * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Pgm {
        path: path.to_path_buf(),
        msg,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let mut token = |what: &str| -> std::result::Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format!("header ends before {what}"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token("magic")? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token(what)?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max != 255 {
        return Err(format!("maxval {max}, expected 255"));
    }
    // exactly one whitespace byte separates the header from the payload
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    if payload.len() != w * h {
        return Err(format!("payload has {} bytes, expected {}", payload.len(), w * h));
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Frame::new(w, h, pixels).map_err(|e| e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn question_path(dir: &Path, id: u64, t: usize) -> PathBuf {
    dir.join(format!("{id}_q{t}.pgm"))
}

pub fn candidate_path(dir: &Path, id: u64, k: usize) -> PathBuf {
    dir.join(format!("{id}_c{k}.pgm"))
}

pub fn video_frame_path(dir: &Path, id: u64, t: usize) -> PathBuf {
    dir.join(format!("{id}_f{t}.pgm"))
}

pub fn write_problems(dir: &Path, problems: &[SequenceProblem]) -> Result<()> {
    ensure_dir(dir)?;
    let mut manifest = String::new();
    for p in problems {
        for (t, f) in p.question.iter().enumerate() {
            write_pgm(&question_path(dir, p.id, t + 1), f)?;
        }
        for (k, f) in p.candidates.iter().enumerate() {
            write_pgm(&candidate_path(dir, p.id, k), f)?;
        }
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            p.id,
            p.question.len(),
            p.candidates.len(),
            p.answer_index,
            p.program
        ));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Manifest entries as (line number, whitespace-separated fields).
type ManifestLines = Vec<(usize, Vec<String>)>;

fn manifest_lines(dir: &Path) -> Result<(PathBuf, ManifestLines)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').map(str::to_string).collect()))
        .collect();
    Ok((path, lines))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[String], i: usize, what: &str) -> Result<T> {
    fields[i].parse().map_err(|_| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {what} `{}`", fields[i]),
    })
}

pub fn read_problems(dir: &Path) -> Result<Vec<SequenceProblem>> {
    let (path, lines) = manifest_lines(dir)?;
    let mut out = Vec::with_capacity(lines.len());
    for (line, f) in lines {
        let bad = |msg: String| Error::Manifest {
            path: path.clone(),
            line,
            msg,
        };
        if f.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", f.len())));
        }
        let id: u64 = field(&path, line, &f, 0, "id")?;
        let t: usize = field(&path, line, &f, 1, "T")?;
        let k: usize = field(&path, line, &f, 2, "K")?;
        let answer_index: usize = field(&path, line, &f, 3, "answer index")?;
        if t == 0 || k == 0 || answer_index >= k {
            return Err(bad(format!("inconsistent T={t} K={k} answer={answer_index}")));
        }
        let program: TransformProgram = f[4].parse().map_err(|e: Error| bad(e.to_string()))?;
        let question = (1..=t)
            .map(|s| read_pgm(&question_path(dir, id, s)))
            .collect::<Result<Vec<_>>>()?;
        let candidates = (0..k)
            .map(|c| read_pgm(&candidate_path(dir, id, c)))
            .collect::<Result<Vec<_>>>()?;
        out.push(SequenceProblem {
            id,
            question,
            candidates,
            answer_index,
            labels: sequence_labels(&program),
            program,
        });
    }
    Ok(out)
}

pub fn write_videos(dir: &Path, videos: &[MovingSpriteVideo]) -> Result<()> {
    ensure_dir(dir)?;
    let mut manifest = String::new();
    for v in videos {
        for (t, f) in v.frames.iter().enumerate() {
            write_pgm(&video_frame_path(dir, v.id, t + 1), f)?;
        }
        manifest.push_str(&format!("{}\t{}\n", v.id, v.frames.len()));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_videos(dir: &Path) -> Result<Vec<MovingSpriteVideo>> {
    let (path, lines) = manifest_lines(dir)?;
    let mut out = Vec::with_capacity(lines.len());
    for (line, f) in lines {
        if f.len() != 2 {
            return Err(Error::Manifest {
                path: path.clone(),
                line,
                msg: format!("expected 2 tab-separated fields, found {}", f.len()),
            });
        }
        let id: u64 = field(&path, line, &f, 0, "id")?;
        let n: usize = field(&path, line, &f, 1, "frame count")?;
        let frames = (1..=n)
            .map(|t| read_pgm(&video_frame_path(dir, id, t)))
            .collect::<Result<Vec<_>>>()?;
        out.push(MovingSpriteVideo {
            id,
            frames,
            sprites: Vec::new(),
        });
    }
    Ok(out)
}

/// Which kind of dataset a directory holds, judged by its manifest's first
/// record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Problems,
    Videos,
}

pub fn detect_kind(dir: &Path) -> Result<DatasetKind> {
    let (path, lines) = manifest_lines(dir)?;
    match lines.first().map(|(_, f)| f.len()) {
        Some(2) => Ok(DatasetKind::Videos),
        Some(5) => Ok(DatasetKind::Problems),
        Some(n) => Err(Error::Manifest {
            path,
            line: lines[0].0,
            msg: format!("unrecognized record with {n} fields"),
        }),
        None => Err(Error::Manifest {
            path,
            line: 0,
            msg: "empty manifest".into(),
        }),
    }
}
