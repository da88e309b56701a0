//! On-disk layout: `frames/%06d.ppm`, `masks/%06d.pgm`, `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::{read_pgm, read_ppm, write_pgm, write_ppm, RgbImage};
use super::{SceneSpec, VideoSequence};
use crate::error::{Error, Result};
use crate::numerics::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub width: usize,
    pub height: usize,
    pub num_objects: usize,
    pub frames: usize,
    pub annotated: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("{t:06}.ppm"))
}

pub fn mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("masks").join(format!("{t:06}.pgm"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a dataset one frame at a time.
pub struct DatasetWriter {
    dir: PathBuf,
    shape: Option<(usize, usize)>,
    written: usize,
}

impl DatasetWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        create_dir(&dir.join("frames"))?;
        create_dir(&dir.join("masks"))?;
        Ok(DatasetWriter {
            dir: dir.to_path_buf(),
            shape: None,
            written: 0,
        })
    }

    /// Frames must arrive in order starting at 0.
    pub fn push(&mut self, frame: &RgbImage, mask: &Grid<u8>) -> Result<()> {
        let shape = *self.shape.get_or_insert(frame.shape());
        frame.ensure_shape(shape)?;
        mask.ensure_shape(shape)?;
        write_ppm(&frame_path(&self.dir, self.written), frame)?;
        write_pgm(&mask_path(&self.dir, self.written), mask)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(self, num_objects: usize, annotated: Vec<usize>, scene: Option<SceneSpec>) -> Result<DatasetMeta> {
        let (height, width) = self.shape.ok_or(Error::Empty("dataset"))?;
        let meta = DatasetMeta {
            width,
            height,
            num_objects,
            frames: self.written,
            annotated,
            scene,
        };
        let path = self.dir.join("meta.json");
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::parse(&path, None, e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(meta)
    }
}

pub fn save_dataset(video: &VideoSequence, dir: &Path) -> Result<()> {
    video.validate()?;
    let mut w = DatasetWriter::create(dir)?;
    for (f, m) in video.frames.iter().zip(&video.gt) {
        w.push(f, m)?;
    }
    w.finish(video.num_objects, video.annotated.clone(), video.scene.clone())?;
    Ok(())
}

fn count_files(dir: &Path, ext: &str) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().extension().is_some_and(|x| x == ext) {
            n += 1;
        }
    }
    Ok(n)
}

/// Lazily reads frames and masks of a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    meta: DatasetMeta,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&path, None, e.to_string()))?;
        if meta.frames == 0 {
            return Err(Error::Video(format!("{}: no frames", path.display())));
        }
        if let Some(&bad) = meta.annotated.iter().find(|&&t| t >= meta.frames) {
            return Err(Error::Video(format!("annotated frame {bad} out of range")));
        }
        let frames = count_files(&dir.join("frames"), "ppm")?;
        let masks = count_files(&dir.join("masks"), "pgm")?;
        if frames != meta.frames || masks != meta.frames {
            return Err(Error::Video(format!(
                "{}: meta lists {} frames but found {frames} frame files and {masks} mask files",
                dir.display(),
                meta.frames
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.meta.frames
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frames == 0
    }

    pub fn frame(&self, t: usize) -> Result<RgbImage> {
        let path = frame_path(&self.dir, t);
        let img = read_ppm(&path)?;
        self.check_shape(&path, img.shape())?;
        Ok(img)
    }

    pub fn mask(&self, t: usize) -> Result<Grid<u8>> {
        let path = mask_path(&self.dir, t);
        let m = read_pgm(&path)?;
        self.check_shape(&path, m.shape())?;
        if let Some(&l) = m.cells().iter().find(|&&l| l as usize > self.meta.num_objects) {
            return Err(Error::parse(
                &path,
                None,
                format!("label {l} exceeds object count {}", self.meta.num_objects),
            ));
        }
        Ok(m)
    }

    fn check_shape(&self, path: &Path, shape: (usize, usize)) -> Result<()> {
        if shape != (self.meta.height, self.meta.width) {
            return Err(Error::parse(
                path,
                None,
                format!(
                    "image is {}x{}, dataset is {}x{}",
                    shape.1, shape.0, self.meta.width, self.meta.height
                ),
            ));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<VideoSequence> {
        let mut frames = Vec::with_capacity(self.len());
        let mut gt = Vec::with_capacity(self.len());
        for t in 0..self.len() {
            frames.push(self.frame(t)?);
            gt.push(self.mask(t)?);
        }
        Ok(VideoSequence {
            frames,
            gt,
            annotated: self.meta.annotated.clone(),
            num_objects: self.meta.num_objects,
            scene: self.meta.scene.clone(),
        })
    }
}

pub fn load_dataset(dir: &Path) -> Result<VideoSequence> {
    Dataset::open(dir)?.load()
}
