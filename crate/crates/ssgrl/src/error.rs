use std::path::{Path, PathBuf};

/// Errors raised at the file and command boundary.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed binary file.
    #[error("{file}: byte {offset}: {msg}")]
    Binary {
        file: String,
        offset: u64,
        msg: String,
    },
    /// Malformed text line.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    /// Structurally inconsistent file (counts that disagree with a header).
    #[error("{file}: {msg}")]
    Format { file: String, msg: String },
    #[error("{0}")]
    Lookup(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] ssgrl_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit code for a failed command.
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(ssgrl_core::Error::Numeric(_)) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.exit_code() == EXIT_NUMERIC
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn display_name(path: &Path) -> String {
    path.display().to_string()
}
