use std::path::Path;

use afb_core::synthgen::{DatasetMeta, DatasetWriter, SceneGenerator};
use afb_core::SceneSpec;

use crate::error::CliResult;

/// Renders `spec` into `out` one frame at a time.
pub fn generate(spec: &SceneSpec, out: &Path) -> CliResult<DatasetMeta> {
    let gen = SceneGenerator::new(spec.clone())?;
    let mut writer = DatasetWriter::create(out)?;
    for t in 0..spec.frames {
        let (frame, mask) = gen.render(t);
        writer.push(&frame, &mask)?;
    }
    Ok(writer.finish(spec.num_objects, (0..spec.frames).collect(), Some(spec.clone()))?)
}
