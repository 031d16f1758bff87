use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use ghostline_core::formats::{parse_pose_sequence, write_pose_sequence};
use ghostline_core::RigidTransform;

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Reads and parses a file, naming the file in any parse error.
pub fn load<T>(path: &Path, parse: impl FnOnce(&str) -> ghostline_core::Result<T>) -> Result<T> {
    let text = read(path)?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A pose file holding exactly one pose.
pub fn load_pose(path: &Path) -> Result<RigidTransform> {
    let poses = load(path, parse_pose_sequence)?;
    match poses.as_slice() {
        [p] => Ok(*p),
        _ => Err(anyhow!(ghostline_core::Error::Parse {
            line: 0,
            message: format!("{} must hold exactly one pose, found {}", path.display(), poses.len()),
        })),
    }
}

pub fn write_pose(path: &Path, pose: &RigidTransform) -> Result<()> {
    write(path, &write_pose_sequence(std::slice::from_ref(pose)))
}
