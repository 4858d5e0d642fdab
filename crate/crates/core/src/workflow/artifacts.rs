//! Off-chain content-addressed blobs. The chain stores only digests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::crypto::{hash256, Digest};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact {0} not found")]
    NotFound(Digest),
    #[error("artifact {expected} is corrupt (content hashes to {actual})")]
    Corrupt { expected: Digest, actual: Digest },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Flat directory of files named by lowercase hex digest.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<ArtifactStore> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ArtifactStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, digest: &Digest) -> PathBuf {
        self.root.join(digest.to_hex())
    }

    pub fn put(&self, content: &[u8]) -> Result<Digest, ArtifactError> {
        let digest = hash256(content);
        let path = self.path_of(&digest);
        if !path.exists() {
            let tmp = self.root.join(format!(".{}.tmp", digest.to_hex()));
            fs::write(&tmp, content)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(digest)
    }

    /// Reads and re-hashes the blob.
    pub fn get(&self, digest: &Digest) -> Result<Vec<u8>, ArtifactError> {
        let content = match fs::read(self.path_of(digest)) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ArtifactError::NotFound(*digest))
            }
            Err(e) => return Err(e.into()),
        };
        let actual = hash256(&content);
        if actual != *digest {
            return Err(ArtifactError::Corrupt {
                expected: *digest,
                actual,
            });
        }
        Ok(content)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.path_of(digest).is_file()
    }
}
