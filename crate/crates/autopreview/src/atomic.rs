//! Write-then-rename helpers. Nothing appears at a final path until it is complete.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes a file through `fill` into a temp file beside `path`, then renames it into place.
pub fn write_file<F>(path: &Path, fill: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = parent_of(path);
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> io::Result<()> {
    write_file(path, |w| w.write_all(bytes))
}

/// Builds a directory in a temp location beside `path` and moves it into place.
///
/// An existing directory at `path` is replaced only if `replaceable` accepts it.
pub fn write_dir<F>(path: &Path, replaceable: impl Fn(&Path) -> bool, fill: F) -> io::Result<()>
where
    F: FnOnce(&Path) -> io::Result<()>,
{
    let parent = parent_of(path);
    fs::create_dir_all(parent)?;
    if path.exists() {
        let empty = path.is_dir() && fs::read_dir(path)?.next().is_none();
        if !empty && !replaceable(path) {
            return Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("{} exists and is not a previous output", path.display()),
            ));
        }
    }
    let staging = tempfile::Builder::new().prefix(".staging").tempdir_in(parent)?;
    fill(staging.path())?;
    let staged = staging.keep();
    if path.exists() {
        let old = tempfile::Builder::new().prefix(".old").tempdir_in(parent)?.keep();
        fs::remove_dir(&old)?;
        fs::rename(path, &old)?;
        fs::rename(&staged, path)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&staged, path)?;
    }
    Ok(())
}
