use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afb_core::metrics::evaluate;
use afb_core::synthgen::{read_pgm, Dataset};
use afb_core::EvalReport;

use crate::error::{io_err, CliError, CliResult};

/// `%06d.pgm` files in `dir` (or in `dir/masks` when present), by index.
pub fn list_masks(dir: &Path) -> CliResult<BTreeMap<usize, PathBuf>> {
    let sub = dir.join("masks");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
        let path = entry.map_err(|e| io_err(&dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let idx = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| CliError::Data(format!("{}: not a frame-numbered mask", path.display())))?;
        out.insert(idx, path);
    }
    Ok(out)
}

/// Scores predicted masks for frames `1..T` against the dataset at `gt`.
/// Predictions must cover exactly `1..T` or `0..T`.
pub fn eval(pred: &Path, gt: &Path) -> CliResult<EvalReport> {
    let ds = Dataset::open(gt)?;
    let t = ds.len();
    let files = list_masks(pred)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no predicted masks", pred.display())));
    }
    let skip = usize::from(!files.contains_key(&0));
    let expected: Vec<usize> = (skip..t).collect();
    if !files.keys().copied().eq(expected.iter().copied()) {
        return Err(CliError::Data(format!(
            "predictions cover {} frames ({:?}..={:?}), dataset has {t}",
            files.len(),
            files.keys().next(),
            files.keys().last()
        )));
    }
    let mut p = Vec::with_capacity(t);
    let mut g = Vec::with_capacity(t);
    for i in 1..t {
        let (pm, gm) = (read_pgm(&files[&i])?, ds.mask(i)?);
        if pm.shape() != gm.shape() {
            return Err(CliError::Data(format!(
                "{}: shape {:?} differs from ground truth {:?}",
                files[&i].display(),
                pm.shape(),
                gm.shape()
            )));
        }
        p.push(pm);
        g.push(gm);
    }
    if p.is_empty() {
        return Err(CliError::Data("dataset has no frame after the annotated one".into()));
    }
    Ok(evaluate(&p, &g, ds.meta().num_objects)?)
}
